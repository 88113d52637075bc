//! Multi-trial, multi-policy experiment execution and CSV output.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Once;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentSpec, ValidatedExperiment};
use crate::detect::{delay_threshold, DetectorConfig};
use crate::env::SegmentedEnvironment;
use crate::error::Result;
use crate::orchestrate::{self, classify_alarms, PolicyKind, Trajectory};
use crate::regret::{self, Aggregate, NeumaierSum};

static STOP: AtomicBool = AtomicBool::new(false);
static HANDLER: Once = Once::new();

/// Installs a Ctrl-C handler that asks running experiments to stop after the
/// current batch of trials. Safe to call repeatedly.
pub fn install_interrupt_handler() {
    HANDLER.call_once(|| {
        // Another handler may already own the signal; then interrupts simply
        // are not intercepted.
        let _ = ctrlc::set_handler(|| STOP.store(true, Ordering::SeqCst));
    });
}

pub const TRUNCATION_MARKER: &str = "# truncated";

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn policy_salt(policy: PolicyKind) -> u64 {
    policy
        .name()
        .bytes()
        .fold(0xCBF2_9CE4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01B3))
}

/// Seed of one trial. With common random numbers every policy of a trial
/// sees the same stream.
pub fn trial_seed(base_seed: u64, trial: u64, policy: PolicyKind, common: bool) -> u64 {
    let s = base_seed ^ splitmix64(trial);
    if common {
        s
    } else {
        s ^ splitmix64(policy_salt(policy))
    }
}

/// Delay allowances `h_i` for each interior change, using the preceding
/// segment length.
pub fn delay_thresholds(env: &SegmentedEnvironment, detector: &DetectorConfig, alpha: f64) -> Vec<u64> {
    (0..env.num_segments() - 1)
        .map(|i| delay_threshold(detector.window(), env.num_arms(), alpha, env.segment_length(i)))
        .collect()
}

/// Everything one trial produced that the reductions need.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub trial: u64,
    pub seed: u64,
    pub trajectory: Trajectory,
    pub cum_reward: Vec<f64>,
    pub cum_std_regret: Vec<f64>,
}

/// Runs one trial of `policy`.
pub fn run_trial(exp: &ValidatedExperiment, policy: PolicyKind, trial: u64) -> Result<TrialOutcome> {
    let spec = &exp.spec;
    let seed = trial_seed(spec.base_seed, trial, policy, spec.common_random_numbers);
    let mut cfg = spec.run_config(policy, exp.detector);
    cfg.seed = seed;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trajectory = orchestrate::run(&exp.env, &cfg, &mut rng)?;
    let rewards: Vec<f64> = trajectory.rewards().collect();
    Ok(TrialOutcome {
        trial,
        seed,
        cum_reward: regret::cumulative(&rewards),
        cum_std_regret: regret::standard_regret(&trajectory, &exp.env)?,
        trajectory,
    })
}

/// Per-policy reductions over all completed trials.
#[derive(Debug, Clone)]
pub struct PolicyResult {
    pub policy: PolicyKind,
    pub seeds: Vec<u64>,
    /// Cumulative standard regret at `T`, per trial.
    pub final_std_regret: Vec<f64>,
    /// Mean and SE of cumulative standard regret at each logged step.
    pub std_regret: Aggregate,
    /// Mean reward at every step.
    pub mean_reward: Vec<f64>,
    /// Cumulative excess regret against the segment oracle at every step.
    pub excess: Option<Vec<f64>>,
    pub alarms: Vec<Vec<u64>>,
}

impl PolicyResult {
    pub fn final_mean_std_regret(&self) -> f64 {
        *self.std_regret.mean.last().unwrap_or(&0.0)
    }

    pub fn final_se_std_regret(&self) -> f64 {
        *self.std_regret.se.last().unwrap_or(&0.0)
    }

    pub fn final_excess(&self) -> Option<f64> {
        self.excess.as_ref().and_then(|e| e.last().copied())
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub policies: Vec<PolicyResult>,
    /// Logged step indices (1-based).
    pub logged_steps: Vec<u64>,
    pub trials_completed: u64,
    pub truncated: bool,
    pub files: Vec<PathBuf>,
}

impl ExperimentResult {
    pub fn policy(&self, p: PolicyKind) -> Option<&PolicyResult> {
        self.policies.iter().find(|r| r.policy == p)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: ExperimentSpec,
    pub version: String,
    pub horizon: u64,
    pub change_points: Vec<u64>,
    pub window: Option<usize>,
    pub threshold: Option<f64>,
    pub delay_thresholds: Vec<u64>,
    pub seeds: Vec<PolicySeeds>,
    pub trials_completed: u64,
    pub truncated: bool,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicySeeds {
    pub policy: PolicyKind,
    pub seeds: Vec<u64>,
}

#[derive(Serialize)]
struct TrajectoryRow {
    trial: u64,
    policy: &'static str,
    t: u64,
    action: usize,
    reward: f64,
    cum_reward: f64,
    cum_std_regret: f64,
    explored: u8,
    alarm: u8,
}

#[derive(Serialize)]
struct AlarmRow {
    trial: u64,
    policy: &'static str,
    t: u64,
    label: &'static str,
    change: Option<usize>,
    delay: Option<u64>,
}

#[derive(Serialize)]
struct AggregateRow {
    policy: &'static str,
    t: u64,
    mean_cum_std_regret: f64,
    se: f64,
    mean_cum_excess_regret: Option<f64>,
}

struct Writers {
    dir: PathBuf,
    trajectories: Vec<(PolicyKind, csv::Writer<BufWriter<File>>)>,
    /// Alarm rows per requested policy, written policy-major at the end so
    /// the file does not depend on batch boundaries.
    alarms: Vec<(PolicyKind, Vec<AlarmRow>)>,
}

fn trajectory_path(dir: &Path, p: PolicyKind) -> PathBuf {
    dir.join(format!("trajectories_{}.csv", p.name()))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(path)?)))
}

fn finish_csv(w: csv::Writer<BufWriter<File>>, truncated: bool) -> Result<()> {
    let mut inner = w.into_inner().map_err(|e| e.into_error())?;
    if truncated {
        writeln!(inner, "{TRUNCATION_MARKER}")?;
    }
    inner.flush()?;
    Ok(())
}

struct Accumulator {
    policy: PolicyKind,
    seeds: Vec<u64>,
    final_std: Vec<f64>,
    logged_std: Vec<Vec<f64>>,
    reward_sums: Vec<NeumaierSum>,
    alarms: Vec<Vec<u64>>,
}

/// Runs the experiment without writing anything.
pub fn run_in_memory(exp: &ValidatedExperiment) -> Result<ExperimentResult> {
    execute(exp, false, &STOP)
}

/// Runs the experiment and writes CSVs plus a manifest to `spec.output_dir`.
/// Stops early (with truncation markers) after Ctrl-C once
/// [`install_interrupt_handler`] has been called.
pub fn run_experiment(exp: &ValidatedExperiment) -> Result<ExperimentResult> {
    execute(exp, true, &STOP)
}

/// [`run_experiment`] with a caller-owned stop flag, checked between batches.
pub fn run_experiment_with_stop(exp: &ValidatedExperiment, stop: &AtomicBool) -> Result<ExperimentResult> {
    execute(exp, true, stop)
}

fn execute(exp: &ValidatedExperiment, write: bool, stop: &AtomicBool) -> Result<ExperimentResult> {
    let start = Instant::now();
    let spec = &exp.spec;
    let env = &exp.env;
    let horizon = env.horizon();
    let stride = spec.log_stride.max(1);
    let logged_steps: Vec<u64> = (1..=horizon).filter(|t| t % stride == 0 || *t == horizon).collect();

    // The segment oracle is the excess-regret reference; run it even when not
    // requested, but only report policies that were asked for.
    let mut run_policies = spec.policies.clone();
    let needs_reference = run_policies
        .iter()
        .any(|p| matches!(p, PolicyKind::DeCd | PolicyKind::UeCd | PolicyKind::NoCd));
    if needs_reference && !run_policies.contains(&PolicyKind::SegmentOracle) {
        run_policies.push(PolicyKind::SegmentOracle);
    }

    let h = exp
        .detector
        .map(|d| delay_thresholds(env, &d, spec.alpha))
        .unwrap_or_default();

    let mut writers = if write {
        fs::create_dir_all(&spec.output_dir)?;
        let trajectories = spec
            .policies
            .iter()
            .map(|&p| Ok((p, csv_writer(&trajectory_path(&spec.output_dir, p))?)))
            .collect::<Result<Vec<_>>>()?;
        Some(Writers {
            dir: spec.output_dir.clone(),
            trajectories,
            alarms: spec.policies.iter().map(|&p| (p, Vec::new())).collect(),
        })
    } else {
        None
    };

    let mut accs: Vec<Accumulator> = run_policies
        .iter()
        .map(|&policy| Accumulator {
            policy,
            seeds: Vec::new(),
            final_std: Vec::new(),
            logged_std: Vec::new(),
            reward_sums: vec![NeumaierSum::default(); horizon as usize],
            alarms: Vec::new(),
        })
        .collect();

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = spec.jobs {
        builder = builder.num_threads(j);
    }
    let pool = builder
        .build()
        .map_err(|e| std::io::Error::other(e.to_string()))?;
    let batch = (pool.current_num_threads() as u64 * 2).max(1);

    let mut completed = 0u64;
    let mut truncated = false;
    while completed < spec.trials {
        if stop.load(Ordering::SeqCst) {
            truncated = true;
            break;
        }
        let end = (completed + batch).min(spec.trials);
        let jobs: Vec<(usize, u64)> = (0..run_policies.len())
            .flat_map(|pi| (completed..end).map(move |t| (pi, t)))
            .collect();
        let outcomes: Vec<Result<TrialOutcome>> = pool.install(|| {
            jobs.par_iter()
                .map(|&(pi, trial)| run_trial(exp, run_policies[pi], trial))
                .collect()
        });
        // Results arrive in job order: policy-major, then trial.
        for ((pi, _), outcome) in jobs.iter().zip(outcomes) {
            let o = outcome?;
            let acc = &mut accs[*pi];
            record(acc, &o, &logged_steps);
            if let Some(w) = writers.as_mut() {
                write_trial(w, acc.policy, &o, &logged_steps, env, &h)?;
            }
        }
        completed = end;
    }

    let reference_mean: Option<Vec<f64>> = accs
        .iter()
        .find(|a| a.policy == PolicyKind::SegmentOracle)
        .filter(|a| !a.seeds.is_empty())
        .map(mean_rewards);

    let mut results = Vec::new();
    for acc in accs.iter().filter(|a| spec.policies.contains(&a.policy)) {
        if acc.seeds.is_empty() {
            continue;
        }
        let mean_reward = mean_rewards(acc);
        let excess = match &reference_mean {
            Some(r) => Some(regret::excess_regret(&mean_reward, r)?),
            None => None,
        };
        results.push(PolicyResult {
            policy: acc.policy,
            seeds: acc.seeds.clone(),
            final_std_regret: acc.final_std.clone(),
            std_regret: regret::aggregate(&acc.logged_std)?,
            mean_reward,
            excess,
            alarms: acc.alarms.clone(),
        });
    }

    let mut files = Vec::new();
    if let Some(w) = writers {
        for (p, tw) in w.trajectories {
            finish_csv(tw, truncated)?;
            files.push(trajectory_path(&w.dir, p));
        }
        let alarms_path = w.dir.join("alarms.csv");
        let mut aw = csv_writer(&alarms_path)?;
        for (_, rows) in &w.alarms {
            for row in rows {
                aw.serialize(row)?;
            }
        }
        finish_csv(aw, truncated)?;
        files.push(alarms_path);

        let agg_path = w.dir.join("aggregate.csv");
        let mut agg = csv_writer(&agg_path)?;
        for r in &results {
            for (j, &t) in logged_steps.iter().enumerate() {
                agg.serialize(AggregateRow {
                    policy: r.policy.name(),
                    t,
                    mean_cum_std_regret: r.std_regret.mean[j],
                    se: r.std_regret.se[j],
                    mean_cum_excess_regret: r.excess.as_ref().map(|e| e[t as usize - 1]),
                })?;
            }
        }
        finish_csv(agg, truncated)?;
        files.push(agg_path);

        let manifest = Manifest {
            spec: spec.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            horizon,
            change_points: env.change_points().to_vec(),
            window: exp.detector.map(|d| d.window()),
            threshold: exp.detector.map(|d| d.threshold()),
            delay_thresholds: h.clone(),
            seeds: accs
                .iter()
                .map(|a| PolicySeeds {
                    policy: a.policy,
                    seeds: a.seeds.clone(),
                })
                .collect(),
            trials_completed: completed.min(spec.trials),
            truncated,
            wall_time_secs: start.elapsed().as_secs_f64(),
        };
        let manifest_path = w.dir.join("manifest.json");
        fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)? + "\n")?;
        files.push(manifest_path);
    }

    Ok(ExperimentResult {
        policies: results,
        logged_steps,
        trials_completed: if truncated { completed } else { spec.trials },
        truncated,
        files,
    })
}

fn mean_rewards(acc: &Accumulator) -> Vec<f64> {
    let n = acc.seeds.len() as f64;
    acc.reward_sums.iter().map(|s| s.value() / n).collect()
}

fn record(acc: &mut Accumulator, o: &TrialOutcome, logged: &[u64]) {
    acc.seeds.push(o.seed);
    acc.final_std.push(*o.cum_std_regret.last().unwrap_or(&0.0));
    acc.logged_std
        .push(logged.iter().map(|&t| o.cum_std_regret[t as usize - 1]).collect());
    for (sum, step) in acc.reward_sums.iter_mut().zip(&o.trajectory.steps) {
        sum.add(step.reward);
    }
    acc.alarms.push(o.trajectory.alarms.clone());
}

fn write_trial(
    w: &mut Writers,
    policy: PolicyKind,
    o: &TrialOutcome,
    logged: &[u64],
    env: &SegmentedEnvironment,
    h: &[u64],
) -> Result<()> {
    let Some((_, tw)) = w.trajectories.iter_mut().find(|(p, _)| *p == policy) else {
        return Ok(());
    };
    for &t in logged {
        let i = t as usize - 1;
        let s = &o.trajectory.steps[i];
        tw.serialize(TrajectoryRow {
            trial: o.trial,
            policy: policy.name(),
            t,
            action: s.action,
            reward: s.reward,
            cum_reward: o.cum_reward[i],
            cum_std_regret: o.cum_std_regret[i],
            explored: s.explored as u8,
            alarm: s.alarm as u8,
        })?;
    }
    let report = classify_alarms(&o.trajectory.alarms, env, h);
    let rows = match w.alarms.iter_mut().find(|(p, _)| *p == policy) {
        Some((_, rows)) => rows,
        None => return Ok(()),
    };
    for a in report.alarms {
        rows.push(AlarmRow {
            trial: o.trial,
            policy: policy.name(),
            t: a.t,
            label: a.label.name(),
            change: a.change,
            delay: a.delay,
        });
    }
    Ok(())
}
