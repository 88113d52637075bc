use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use psrmab::detect::{self, DetectorConfig};
use psrmab::env::config::EnvDocument;
use psrmab::env::{SegmentedEnvironment, DEFAULT_MIXING_EPS};
use psrmab::harness::config::{DetectorKind, EnvironmentSource, ExperimentSpec, ParamMode};
use psrmab::harness::presets;
use psrmab::harness::runner::{self, install_interrupt_handler};
use psrmab::harness::validate_spec;
use psrmab::orchestrate::{HistoryMode, PolicyKind};
use psrmab::solvers::SolverKind;
use psrmab::Error;

#[derive(Parser)]
#[command(name = "psrmab", version, about = "Piecewise-stationary restless bandit experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a multi-trial experiment and write CSV output.
    Run(RunArgs),
    /// Print steady-state means and mixing times of an environment.
    Inspect(InspectArgs),
    /// Print detector parameters (w, b) and delay allowances.
    Params(ParamsArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment spec (JSON). Other flags override its fields.
    #[arg(long, conflicts_with_all = ["preset", "env"])]
    config: Option<PathBuf>,
    /// Built-in environment.
    #[arg(long, conflicts_with = "env")]
    preset: Option<String>,
    /// Environment document (JSON).
    #[arg(long)]
    env: Option<PathBuf>,
    /// Comma-separated policies.
    #[arg(long, value_delimiter = ',')]
    policies: Option<Vec<String>>,
    #[arg(long)]
    trials: Option<u64>,
    /// Overrides a preset's horizon (change points are respaced evenly).
    #[arg(long)]
    horizon: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Detector mean-shift parameter.
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, value_enum)]
    params: Option<ParamModeArg>,
    /// Disable change detection.
    #[arg(long)]
    no_detector: bool,
    #[arg(long, value_enum)]
    solver: Option<SolverArg>,
    #[arg(long)]
    m_min: Option<u64>,
    #[arg(long, value_enum)]
    history: Option<HistoryArg>,
    /// Pair trial seeds across policies.
    #[arg(long)]
    crn: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    stride: Option<u64>,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long, conflicts_with = "env", required_unless_present = "env")]
    preset: Option<String>,
    #[arg(long)]
    env: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MIXING_EPS)]
    eps: f64,
}

#[derive(Args)]
struct ParamsArgs {
    #[arg(long, value_enum, default_value = "one-state")]
    mode: ParamModeArg,
    #[arg(long, default_value_t = 0.3)]
    delta: f64,
    #[arg(long = "K", visible_alias = "arms")]
    arms: usize,
    #[arg(long = "T", visible_alias = "horizon")]
    horizon: u64,
    /// Mixing time (general and empirical modes).
    #[arg(long = "L", visible_alias = "mixing")]
    mixing: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Number of equally spaced segments used for the delay allowances.
    #[arg(long = "M", visible_alias = "segments", default_value_t = 1)]
    segments: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ParamModeArg {
    OneState,
    General,
    Empirical,
}

impl From<ParamModeArg> for ParamMode {
    fn from(m: ParamModeArg) -> Self {
        match m {
            ParamModeArg::OneState => ParamMode::OneState,
            ParamModeArg::General => ParamMode::General,
            ParamModeArg::Empirical => ParamMode::Empirical,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Ucb1,
    ModelGreedy,
}

#[derive(Clone, Copy, ValueEnum)]
enum HistoryArg {
    Shared,
    BaseOnly,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Inspect(a) => cmd_inspect(a),
        Command::Params(a) => cmd_params(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ (Error::Validation(_) | Error::UnknownPreset(_))) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn build_spec(a: &RunArgs) -> psrmab::Result<ExperimentSpec> {
    let mut spec = match (&a.config, &a.preset, &a.env) {
        (Some(path), _, _) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::Validation(vec![psrmab::Diagnostic::new(
                    "--config",
                    format!("cannot read {}: {e}", path.display()),
                )])
            })?;
            ExperimentSpec::parse(&text)?
        }
        (None, Some(name), _) => ExperimentSpec::new(
            EnvironmentSource::Preset {
                name: name.clone(),
                horizon: None,
            },
            PolicyKind::ALL.to_vec(),
        ),
        (None, None, Some(path)) => ExperimentSpec::new(
            EnvironmentSource::Config { path: path.clone() },
            PolicyKind::ALL.to_vec(),
        ),
        (None, None, None) => {
            return Err(Error::Validation(vec![psrmab::Diagnostic::new(
                "",
                "one of --config, --preset or --env is required",
            )]))
        }
    };
    if let Some(list) = &a.policies {
        let mut policies = Vec::new();
        let mut errs = Vec::new();
        for (i, name) in list.iter().enumerate() {
            match PolicyKind::parse(name.trim()) {
                Some(p) => policies.push(p),
                None => errs.push(psrmab::Diagnostic::new(
                    format!("policies[{i}]"),
                    format!("unknown policy `{name}`"),
                )),
            }
        }
        if !errs.is_empty() {
            return Err(Error::Validation(errs));
        }
        spec.policies = policies;
    }
    if let Some(t) = a.horizon {
        match &mut spec.environment {
            EnvironmentSource::Preset { horizon, .. } => *horizon = Some(t),
            EnvironmentSource::Synthetic(p) => p.horizon = t,
            EnvironmentSource::Config { .. } => {
                return Err(Error::Validation(vec![psrmab::Diagnostic::new(
                    "--horizon",
                    "cannot override the horizon of an environment document",
                )]))
            }
        }
    }
    if let Some(v) = a.trials {
        spec.trials = v;
    }
    if let Some(v) = a.alpha {
        spec.alpha = v;
    }
    if let Some(v) = a.delta {
        spec.detector.delta = v;
    }
    if let Some(v) = a.params {
        spec.detector.params = v.into();
    }
    if a.no_detector {
        spec.detector.kind = DetectorKind::None;
    }
    if let Some(v) = a.solver {
        spec.solver.kind = match v {
            SolverArg::Ucb1 => SolverKind::Ucb1,
            SolverArg::ModelGreedy => SolverKind::ModelGreedy,
        };
    }
    if let Some(v) = a.m_min {
        spec.solver.m_min = v;
    }
    if let Some(v) = a.history {
        spec.history = match v {
            HistoryArg::Shared => HistoryMode::Shared,
            HistoryArg::BaseOnly => HistoryMode::BaseOnly,
        };
    }
    if a.crn {
        spec.common_random_numbers = true;
    }
    if let Some(v) = a.seed {
        spec.base_seed = v;
    }
    if let Some(v) = &a.out {
        spec.output_dir = v.clone();
    }
    if let Some(v) = a.stride {
        spec.log_stride = v;
    }
    if a.jobs.is_some() {
        spec.jobs = a.jobs;
    }
    Ok(spec)
}

fn cmd_run(a: RunArgs) -> psrmab::Result<()> {
    let exp = validate_spec(build_spec(&a)?)?;
    for w in &exp.warnings {
        eprintln!("warning: {w}");
    }
    install_interrupt_handler();
    let res = runner::run_experiment(&exp)?;
    if res.truncated {
        eprintln!(
            "interrupted after {} of {} trials; output marked truncated",
            res.trials_completed, exp.spec.trials
        );
    }
    if let Some(d) = exp.detector {
        println!("detector: w = {}, b = {:.4}", d.window(), d.threshold());
    }
    println!("{:<16} {:>16} {:>10} {:>14} {:>10}", "policy", "std_regret(T)", "se", "excess(T)", "alarms");
    for r in &res.policies {
        let alarms = r.alarms.iter().map(Vec::len).sum::<usize>() as f64 / r.alarms.len() as f64;
        let excess = r.final_excess().map_or("-".to_string(), |e| format!("{e:.2}"));
        println!(
            "{:<16} {:>16.2} {:>10.2} {:>14} {:>10.2}",
            r.policy.name(),
            r.final_mean_std_regret(),
            r.final_se_std_regret(),
            excess,
            alarms
        );
    }
    println!("wrote {}", exp.spec.output_dir.display());
    Ok(())
}

fn load_env(preset: &Option<String>, path: &Option<PathBuf>) -> psrmab::Result<SegmentedEnvironment> {
    match (preset, path) {
        (Some(name), _) => presets::build_preset(name),
        (None, Some(p)) => {
            let text = std::fs::read_to_string(p)?;
            Ok(EnvDocument::parse(&text)?.validate()?.env)
        }
        (None, None) => unreachable!("clap requires one source"),
    }
}

fn cmd_inspect(a: InspectArgs) -> psrmab::Result<()> {
    let env = load_env(&a.preset, &a.env)?;
    println!(
        "arms = {}, segments = {}, horizon = {}, change points = {:?}",
        env.num_arms(),
        env.num_segments(),
        env.horizon(),
        env.change_points()
    );
    println!("{:>7} {:>4} {:>10} {:>10} {:>10}  stationary", "segment", "arm", "mean", "slem", "mixing");
    for i in 0..env.num_segments() {
        for k in 0..env.num_arms() {
            let s = env.summary(i, k, a.eps)?;
            let d: Vec<String> = s.stationary.iter().map(|x| format!("{x:.5}")).collect();
            println!(
                "{:>7} {:>4} {:>10.5} {:>10.5} {:>10.4}  [{}]",
                i + 1,
                k + 1,
                s.arm_mean,
                s.slem,
                s.mixing_time,
                d.join(", ")
            );
        }
        println!("        best arm: {}", env.best_arm(i) + 1);
    }
    println!("max mixing time L = {:.4}", env.mixing_bound(a.eps)?);
    let shifts: Vec<String> = env.mean_shifts().iter().map(|x| format!("{x:.4}")).collect();
    println!("mean shifts at change points: [{}]", shifts.join(", "));
    Ok(())
}

fn cmd_params(a: ParamsArgs) -> psrmab::Result<()> {
    let need_mixing = || {
        a.mixing.ok_or_else(|| {
            Error::Validation(vec![psrmab::Diagnostic::new("--L", "required for this mode")])
        })
    };
    let cfg: DetectorConfig = match a.mode {
        ParamModeArg::OneState => detect::params_one_state(a.delta, a.arms, a.horizon)?,
        ParamModeArg::General => detect::params_general(a.delta, a.arms, a.horizon, need_mixing()?)?,
        ParamModeArg::Empirical => detect::params_empirical(a.arms, a.horizon, need_mixing()?)?,
    };
    println!("w = {}", cfg.window());
    println!("b = {:.6}", cfg.threshold());
    if cfg.threshold() >= cfg.window() as f64 / 2.0 {
        println!("note: b >= w/2, so the test can never fire on rewards in [0, 1]");
    }
    let m = a.segments.max(1);
    let seg = a.horizon / m;
    for i in 1..m {
        println!(
            "h_{i} = {}",
            detect::delay_threshold(cfg.window(), a.arms, a.alpha, seg)
        );
    }
    if m == 1 {
        println!(
            "h(T) = {}",
            detect::delay_threshold(cfg.window(), a.arms, a.alpha, a.horizon)
        );
    }
    Ok(())
}
