//! Experiment specifications (JSON) and their validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::presets::{self, RotationParams};
use crate::detect::{self, DetectorConfig, TestCadence};
use crate::env::config::{EnvDocument, ValidatedEnv};
use crate::env::{config::zero_shift_warnings, DEFAULT_MIXING_EPS};
use crate::error::{Diagnostic, Error, Result};
use crate::orchestrate::{HistoryMode, PolicyKind, RunConfig};
use crate::solvers::SolverSpec;

/// Where the environment comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EnvironmentSource {
    Preset {
        name: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        horizon: Option<u64>,
    },
    /// Path to an environment document; relative paths resolve against the
    /// current directory.
    Config { path: PathBuf },
    Synthetic(RotationParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectorKind {
    #[default]
    Mucb,
    None,
}

/// How `(w, b)` are derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamMode {
    /// i.i.d. formulas; the only setting whose threshold is reachable at
    /// moderate horizons.
    #[default]
    OneState,
    /// Mixing-time-aware formulas.
    General,
    /// `w = floor(100 sqrt(144 L))` with the mixing-aware threshold.
    Empirical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSpec {
    pub kind: DetectorKind,
    pub params: ParamMode,
    pub delta: f64,
    /// Mixing accuracy used for `L` in the general and empirical modes.
    pub eps: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    pub cadence: TestCadence,
}

impl Default for DetectorSpec {
    fn default() -> Self {
        Self {
            kind: DetectorKind::Mucb,
            params: ParamMode::OneState,
            delta: 0.3,
            eps: DEFAULT_MIXING_EPS,
            window: None,
            threshold: None,
            cadence: TestCadence::PulledArm,
        }
    }
}

impl DetectorSpec {
    /// Resolves `(w, b)` for `env`; `None` when detection is off.
    pub fn resolve(&self, env: &crate::env::SegmentedEnvironment) -> Result<Option<DetectorConfig>> {
        if self.kind == DetectorKind::None {
            return Ok(None);
        }
        let k = env.num_arms();
        let t = env.horizon();
        let base = match self.params {
            ParamMode::OneState => detect::params_one_state(self.delta, k, t)?,
            ParamMode::General => detect::params_general(self.delta, k, t, env.mixing_bound(self.eps)?)?,
            ParamMode::Empirical => detect::params_empirical(k, t, env.mixing_bound(self.eps)?)?,
        };
        let window = self.window.unwrap_or(base.window());
        let threshold = match (self.threshold, self.window) {
            (Some(b), _) => b,
            (None, Some(w)) => match self.params {
                ParamMode::OneState => detect::threshold_one_state(w, k, t),
                _ => detect::threshold_general(w, k, t, env.mixing_bound(self.eps)?),
            },
            (None, None) => base.threshold(),
        };
        DetectorConfig::new(window, threshold).map(Some)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub environment: EnvironmentSource,
    pub policies: Vec<PolicyKind>,
    #[serde(default = "default_trials")]
    pub trials: u64,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Every `log_stride`-th step (and the last) is written to trajectory CSVs.
    #[serde(default = "default_stride")]
    pub log_stride: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub history: HistoryMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uniform_rate: Option<f64>,
    #[serde(default)]
    pub detector: DetectorSpec,
    /// Share one seed per trial across all policies.
    #[serde(default)]
    pub common_random_numbers: bool,
    /// Worker threads; `None` uses all cores.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
}

fn default_trials() -> u64 {
    100
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_stride() -> u64 {
    1
}
fn default_alpha() -> f64 {
    1.0
}

impl ExperimentSpec {
    /// Spec with default knobs for the given environment and policies.
    pub fn new(environment: EnvironmentSource, policies: Vec<PolicyKind>) -> Self {
        Self {
            environment,
            policies,
            trials: default_trials(),
            base_seed: 0,
            output_dir: default_output_dir(),
            log_stride: default_stride(),
            alpha: default_alpha(),
            solver: SolverSpec::default(),
            history: HistoryMode::Shared,
            uniform_rate: None,
            detector: DetectorSpec::default(),
            common_random_numbers: false,
            jobs: None,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let path = if path == "." { String::new() } else { path };
            Error::Validation(vec![Diagnostic::new(path, e.into_inner().to_string())])
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    /// Invariant checks that do not need the environment.
    pub fn check(&self) -> Vec<Diagnostic> {
        let mut errs = Vec::new();
        if self.trials == 0 {
            errs.push(Diagnostic::new("trials", "must be at least 1"));
        }
        if self.policies.is_empty() {
            errs.push(Diagnostic::new("policies", "at least one policy is required"));
        }
        for (i, p) in self.policies.iter().enumerate() {
            if self.policies[..i].contains(p) {
                errs.push(Diagnostic::new(format!("policies[{i}]"), format!("duplicate policy `{p}`")));
            }
        }
        if self.log_stride == 0 {
            errs.push(Diagnostic::new("log_stride", "must be at least 1"));
        }
        if !(self.alpha > 0.0) {
            errs.push(Diagnostic::new("alpha", format!("must be positive, got {}", self.alpha)));
        }
        if !(self.solver.bonus_scale >= 0.0 && self.solver.bonus_scale.is_finite()) {
            errs.push(Diagnostic::new("solver.bonus_scale", "must be finite and non-negative"));
        }
        if self.solver.m_min == 0 {
            errs.push(Diagnostic::new("solver.m_min", "must be at least 1"));
        }
        if let Some(g) = self.uniform_rate {
            if !(g > 0.0 && g <= 1.0) {
                errs.push(Diagnostic::new("uniform_rate", format!("must lie in (0, 1], got {g}")));
            }
        }
        let d = &self.detector;
        if !(d.delta > 0.0 && d.delta <= 1.0) {
            errs.push(Diagnostic::new("detector.delta", format!("must lie in (0, 1], got {}", d.delta)));
        }
        if !(d.eps > 0.0 && d.eps < 1.0) {
            errs.push(Diagnostic::new("detector.eps", format!("must lie in (0, 1), got {}", d.eps)));
        }
        if let Some(w) = d.window {
            if w < 2 || w % 2 != 0 {
                errs.push(Diagnostic::new("detector.window", format!("must be even and >= 2, got {w}")));
            }
        }
        if let Some(b) = d.threshold {
            if !(b > 0.0 && b.is_finite()) {
                errs.push(Diagnostic::new("detector.threshold", format!("must be positive, got {b}")));
            }
        }
        if self.jobs == Some(0) {
            errs.push(Diagnostic::new("jobs", "must be at least 1"));
        }
        if let EnvironmentSource::Preset { name, horizon } = &self.environment {
            if !presets::PRESET_NAMES.contains(&name.as_str()) {
                errs.push(Diagnostic::new(
                    "environment.name",
                    format!("unknown preset `{name}`, expected one of {:?}", presets::PRESET_NAMES),
                ));
            }
            if *horizon == Some(0) {
                errs.push(Diagnostic::new("environment.horizon", "must be at least 1"));
            }
        }
        errs
    }

    /// Materializes the environment, with non-fatal warnings.
    pub fn load_environment(&self) -> Result<ValidatedEnv> {
        match &self.environment {
            EnvironmentSource::Preset { name, horizon } => {
                let env = presets::build_preset_with_horizon(name, *horizon)?;
                let warnings = zero_shift_warnings(&env);
                Ok(ValidatedEnv { env, warnings })
            }
            EnvironmentSource::Config { path } => load_env_document(path)?.validate(),
            EnvironmentSource::Synthetic(p) => {
                let env = presets::rotation_environment(p)?;
                let warnings = zero_shift_warnings(&env);
                Ok(ValidatedEnv { env, warnings })
            }
        }
    }

    /// Per-trial run configuration for `policy`, without the seed.
    pub fn run_config(&self, policy: PolicyKind, detector: Option<DetectorConfig>) -> RunConfig {
        RunConfig {
            policy,
            alpha: self.alpha,
            detector,
            cadence: self.detector.cadence,
            solver: self.solver,
            history: self.history,
            uniform_rate: self.uniform_rate,
            seed: 0,
        }
    }
}

fn load_env_document(path: &Path) -> Result<EnvDocument> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::Validation(vec![Diagnostic::new(
            "environment.path",
            format!("cannot read {}: {e}", path.display()),
        )])
    })?;
    EnvDocument::parse(&text).map_err(|e| match e {
        Error::Validation(diags) => Error::Validation(
            diags
                .into_iter()
                .map(|d| Diagnostic::new(format!("{}:{}", path.display(), d.path), d.message))
                .collect(),
        ),
        other => other,
    })
}

/// A spec that passed validation, with its environment and warnings.
#[derive(Debug, Clone)]
pub struct ValidatedExperiment {
    pub spec: ExperimentSpec,
    pub env: crate::env::SegmentedEnvironment,
    pub detector: Option<DetectorConfig>,
    pub warnings: Vec<Diagnostic>,
}

/// Parses and fully validates an experiment document. Never panics.
pub fn validate_config(text: &str) -> Result<ValidatedExperiment> {
    validate_spec(ExperimentSpec::parse(text)?)
}

pub fn validate_spec(spec: ExperimentSpec) -> Result<ValidatedExperiment> {
    let errs = spec.check();
    if !errs.is_empty() {
        return Err(Error::Validation(errs));
    }
    let ValidatedEnv { env, warnings } = spec.load_environment().map_err(|e| match e {
        Error::Validation(d) => Error::Validation(d),
        other => Error::Validation(vec![Diagnostic::new("environment", other.to_string())]),
    })?;
    let detector = spec
        .detector
        .resolve(&env)
        .map_err(|e| Error::Validation(vec![Diagnostic::new("detector", e.to_string())]))?;
    Ok(ValidatedExperiment {
        spec,
        env,
        detector,
        warnings,
    })
}
