//! JSON environment documents.
//!
//! ```json
//! {
//!   "horizon": 20000,
//!   "change_points": [0, 4000, 8000, 12000, 16000, 20000],
//!   "arms": [ { "segments": [ { "transition": [[...]], "reward_means": [...] } ] } ],
//!   "noise": "bernoulli",
//!   "initial_state_dist": null
//! }
//! ```
//!
//! `change_points` may be omitted, in which case segments are equally spaced.
//! Validation never panics; every problem is reported with its JSON path.

use serde::{Deserialize, Serialize};

use super::chain::{self, ROW_SUM_TOL};
use super::{equal_change_points, MarkovArmSpec, RewardNoise, SegmentedEnvironment};
use crate::error::{Diagnostic, Error, Result};

/// Mean shifts at or below this are treated as "no change".
pub const ZERO_SHIFT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvDocument {
    pub horizon: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub change_points: Option<Vec<u64>>,
    pub arms: Vec<ArmDocument>,
    #[serde(default)]
    pub noise: RewardNoise,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state_dist: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmDocument {
    pub segments: Vec<SegmentDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentDocument {
    pub transition: Vec<Vec<f64>>,
    pub reward_means: Vec<f64>,
}

/// A validated environment plus non-fatal findings.
#[derive(Debug, Clone)]
pub struct ValidatedEnv {
    pub env: SegmentedEnvironment,
    pub warnings: Vec<Diagnostic>,
}

impl EnvDocument {
    pub fn parse(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let path = if path == "." { String::new() } else { path };
            Error::Validation(vec![Diagnostic::new(path, e.into_inner().to_string())])
        })
    }

    pub fn from_env(env: &SegmentedEnvironment) -> Self {
        let arms = (0..env.num_arms())
            .map(|k| ArmDocument {
                segments: (0..env.num_segments())
                    .map(|i| {
                        let spec = env.spec(i, k);
                        SegmentDocument {
                            transition: spec.transition().to_vec(),
                            reward_means: spec.reward_means().to_vec(),
                        }
                    })
                    .collect(),
            })
            .collect();
        Self {
            horizon: env.horizon(),
            change_points: Some(env.change_points().to_vec()),
            arms,
            noise: env.noise(),
            initial_state_dist: Some(env.initial_state_dist().to_vec()),
        }
    }

    /// Structural and invariant validation.
    pub fn validate(&self) -> Result<ValidatedEnv> {
        let mut errors = Vec::new();
        if self.horizon == 0 {
            errors.push(Diagnostic::new("horizon", "must be at least 1"));
        }
        if self.arms.is_empty() {
            errors.push(Diagnostic::new("arms", "at least one arm is required"));
            return Err(Error::Validation(errors));
        }
        let num_segments = self.arms[0].segments.len();
        if num_segments == 0 {
            errors.push(Diagnostic::new("arms[0].segments", "at least one segment is required"));
        }
        for (k, arm) in self.arms.iter().enumerate() {
            if arm.segments.len() != num_segments {
                errors.push(Diagnostic::new(
                    format!("arms[{k}].segments"),
                    format!("has {} segments, arm 0 has {num_segments}", arm.segments.len()),
                ));
            }
            let states = arm.segments.first().map_or(0, |s| s.transition.len());
            for (i, seg) in arm.segments.iter().enumerate() {
                let path = format!("arms[{k}].segments[{i}]");
                check_segment(seg, states, &path, &mut errors);
            }
        }

        let change_points = match &self.change_points {
            Some(cps) => {
                check_change_points(cps, num_segments, self.horizon, &mut errors);
                cps.clone()
            }
            None => {
                if (num_segments as u64) > self.horizon {
                    errors.push(Diagnostic::new(
                        "horizon",
                        format!("horizon {} is shorter than {num_segments} segments", self.horizon),
                    ));
                }
                equal_change_points(self.horizon, num_segments)
            }
        };

        if let Some(dists) = &self.initial_state_dist {
            if dists.len() != self.arms.len() {
                errors.push(Diagnostic::new(
                    "initial_state_dist",
                    format!("has {} entries for {} arms", dists.len(), self.arms.len()),
                ));
            }
            for (k, d) in dists.iter().enumerate() {
                let sum: f64 = d.iter().sum();
                if d.iter().any(|x| !(0.0..=1.0).contains(x)) || (sum - 1.0).abs() > ROW_SUM_TOL {
                    errors.push(Diagnostic::new(
                        format!("initial_state_dist[{k}]"),
                        format!("not a distribution (sums to {sum}, tolerance {ROW_SUM_TOL:e})"),
                    ));
                }
            }
        }

        if !errors.is_empty() {
            return Err(Error::Validation(errors));
        }

        let specs: Vec<Vec<MarkovArmSpec>> = (0..num_segments)
            .map(|i| {
                self.arms
                    .iter()
                    .map(|arm| {
                        let seg = &arm.segments[i];
                        MarkovArmSpec::new(seg.transition.clone(), seg.reward_means.clone())
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()
            .map_err(|e| Error::Validation(vec![Diagnostic::new("arms", e.to_string())]))?;

        let env = SegmentedEnvironment::new(
            specs,
            change_points,
            self.noise,
            self.initial_state_dist.clone(),
        )
        .map_err(|e| Error::Validation(vec![Diagnostic::new("", e.to_string())]))?;

        Ok(ValidatedEnv {
            warnings: zero_shift_warnings(&env),
            env,
        })
    }
}

fn check_segment(seg: &SegmentDocument, states: usize, path: &str, errors: &mut Vec<Diagnostic>) {
    let n = seg.transition.len();
    if n == 0 {
        errors.push(Diagnostic::new(format!("{path}.transition"), "empty matrix"));
        return;
    }
    if n != states {
        errors.push(Diagnostic::new(
            format!("{path}.transition"),
            format!("has {n} states, segment 0 of this arm has {states}"),
        ));
    }
    let mut shape_ok = true;
    for (s, row) in seg.transition.iter().enumerate() {
        let rp = format!("{path}.transition[{s}]");
        if row.len() != n {
            errors.push(Diagnostic::new(rp, format!("has {} entries, expected {n}", row.len())));
            shape_ok = false;
            continue;
        }
        if let Some(j) = row.iter().position(|x| !(0.0..=1.0).contains(x)) {
            errors.push(Diagnostic::new(
                format!("{rp}[{j}]"),
                format!("probability {} outside [0, 1]", row[j]),
            ));
            shape_ok = false;
            continue;
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            errors.push(Diagnostic::new(
                rp,
                format!("row sums to {sum}, must equal 1 within tolerance {ROW_SUM_TOL:e}"),
            ));
            shape_ok = false;
        }
    }
    if seg.reward_means.len() != n {
        errors.push(Diagnostic::new(
            format!("{path}.reward_means"),
            format!("has {} entries for {n} states", seg.reward_means.len()),
        ));
    }
    if let Some(j) = seg.reward_means.iter().position(|r| !(0.0..=1.0).contains(r)) {
        errors.push(Diagnostic::new(
            format!("{path}.reward_means[{j}]"),
            format!("mean {} outside [0, 1]", seg.reward_means[j]),
        ));
    }
    if shape_ok {
        if let Err(e) = chain::check_ergodic(&seg.transition)
            .and_then(|_| chain::stationary_distribution(&seg.transition).map(|_| ()))
        {
            errors.push(Diagnostic::new(format!("{path}.transition"), e.to_string()));
        }
    }
}

fn check_change_points(cps: &[u64], num_segments: usize, horizon: u64, errors: &mut Vec<Diagnostic>) {
    if cps.len() != num_segments + 1 {
        errors.push(Diagnostic::new(
            "change_points",
            format!("expected {} entries (0, interior points, T), got {}", num_segments + 1, cps.len()),
        ));
        return;
    }
    if cps.first() != Some(&0) {
        errors.push(Diagnostic::new("change_points[0]", "must be 0"));
    }
    if cps.last() != Some(&horizon) {
        errors.push(Diagnostic::new(
            format!("change_points[{}]", cps.len() - 1),
            format!("must equal the horizon {horizon}"),
        ));
    }
    for (i, w) in cps.windows(2).enumerate() {
        if w[1] <= w[0] {
            errors.push(Diagnostic::new(
                format!("change_points[{}]", i + 1),
                format!("{} does not exceed the previous point {}", w[1], w[0]),
            ));
        }
    }
}

/// Declared change points where no arm mean moves.
pub fn zero_shift_warnings(env: &SegmentedEnvironment) -> Vec<Diagnostic> {
    env.mean_shifts()
        .iter()
        .enumerate()
        .filter(|(_, &d)| d <= ZERO_SHIFT_TOL)
        .map(|(i, _)| {
            Diagnostic::new(
                format!("change_points[{}]", i + 1),
                "no arm mean changes here (kernel change preserves every steady-state mean); \
                 detectors only respond to mean shifts",
            )
        })
        .collect()
}
