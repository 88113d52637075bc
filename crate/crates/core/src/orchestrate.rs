//! Policy runners: the exploration + detection framework, its ablations, and
//! the two oracles.
//!
//! Per step of the framework: an exploration block claims the step if one is
//! due, otherwise the base solver selects; the environment is pulled; the
//! solver is updated (exploration steps only in shared-history mode); the
//! detector sees the reward; an alarm resets schedule, detector and solver
//! before the next step.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::detect::{DetectorConfig, MucbDetector, TestCadence};
use crate::env::SegmentedEnvironment;
use crate::error::Result;
use crate::explore::{ExplorationSchedule, UniformSchedule};
use crate::solvers::{BaseSolver, SolverSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    /// Diminishing exploration + change detection.
    #[serde(alias = "framework")]
    DeCd,
    /// Constant-rate exploration + change detection.
    #[serde(alias = "uniform-exploration")]
    UeCd,
    /// The bare base solver, never reset.
    NoCd,
    /// Base solver reset exactly at the true change points.
    SegmentOracle,
    /// Always pulls the segment's best steady-state arm.
    BestArmOracle,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::DeCd,
        PolicyKind::UeCd,
        PolicyKind::NoCd,
        PolicyKind::SegmentOracle,
        PolicyKind::BestArmOracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::DeCd => "de-cd",
            PolicyKind::UeCd => "ue-cd",
            PolicyKind::NoCd => "no-cd",
            PolicyKind::SegmentOracle => "segment-oracle",
            PolicyKind::BestArmOracle => "best-arm-oracle",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "framework" => Some(PolicyKind::DeCd),
            "uniform-exploration" => Some(PolicyKind::UeCd),
            _ => Self::ALL.into_iter().find(|p| p.name() == name),
        }
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Whether exploration-step observations reach the base solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HistoryMode {
    #[default]
    Shared,
    BaseOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub policy: PolicyKind,
    pub alpha: f64,
    /// `None` disables detection.
    pub detector: Option<DetectorConfig>,
    pub cadence: TestCadence,
    pub solver: SolverSpec,
    pub history: HistoryMode,
    /// Exploration rate for [`PolicyKind::UeCd`]; `None` picks
    /// `sqrt((M/T) ln(T/M))`.
    pub uniform_rate: Option<f64>,
    pub seed: u64,
}

impl RunConfig {
    pub fn new(policy: PolicyKind, solver: SolverSpec) -> Self {
        Self {
            policy,
            alpha: 1.0,
            detector: None,
            cadence: TestCadence::PulledArm,
            solver,
            history: HistoryMode::Shared,
            uniform_rate: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: u64,
    pub action: usize,
    pub observed_state: usize,
    pub reward: f64,
    pub explored: bool,
    pub alarm: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub policy: PolicyKind,
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    /// Alarm times, strictly increasing.
    pub alarms: Vec<u64>,
    /// Times at which the base solver was reset (alarms or true change points).
    pub resets: Vec<u64>,
}

impl Trajectory {
    fn with_capacity(policy: PolicyKind, seed: u64, horizon: u64) -> Self {
        Self {
            policy,
            seed,
            steps: Vec::with_capacity(horizon as usize),
            alarms: Vec::new(),
            resets: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn rewards(&self) -> impl Iterator<Item = f64> + '_ {
        self.steps.iter().map(|s| s.reward)
    }

    pub fn explored_count(&self) -> usize {
        self.steps.iter().filter(|s| s.explored).count()
    }
}

enum Exploration {
    Diminishing(ExplorationSchedule),
    Uniform(UniformSchedule),
    Off,
}

impl Exploration {
    fn action(&mut self, t: u64) -> Option<usize> {
        match self {
            Exploration::Diminishing(s) => s.exploration_action(t),
            Exploration::Uniform(s) => s.exploration_action(t),
            Exploration::Off => None,
        }
    }

    fn reset(&mut self, t: u64) {
        match self {
            Exploration::Diminishing(s) => s.reset(t),
            Exploration::Uniform(s) => s.reset(t),
            Exploration::Off => {}
        }
    }
}

fn num_states(env: &SegmentedEnvironment) -> Vec<usize> {
    (0..env.num_arms()).map(|k| env.num_states(k)).collect()
}

/// Dispatches on `cfg.policy`.
pub fn run<R: Rng + ?Sized>(env: &SegmentedEnvironment, cfg: &RunConfig, rng: &mut R) -> Result<Trajectory> {
    match cfg.policy {
        PolicyKind::DeCd | PolicyKind::UeCd | PolicyKind::NoCd => run_framework(env, cfg, rng),
        PolicyKind::SegmentOracle => run_segment_oracle(env, cfg, rng),
        PolicyKind::BestArmOracle => run_best_arm_oracle(env, cfg, rng),
    }
}

/// The exploration + detection loop. `NoCd` runs it with exploration and
/// detection switched off.
pub fn run_framework<R: Rng + ?Sized>(
    env: &SegmentedEnvironment,
    cfg: &RunConfig,
    rng: &mut R,
) -> Result<Trajectory> {
    let k = env.num_arms();
    let horizon = env.horizon();
    let mut exploration = match cfg.policy {
        PolicyKind::UeCd => Exploration::Uniform(UniformSchedule::new(
            cfg.uniform_rate
                .unwrap_or_else(|| UniformSchedule::default_rate(env.num_segments(), horizon)),
            k,
        )),
        PolicyKind::NoCd => Exploration::Off,
        _ => Exploration::Diminishing(ExplorationSchedule::new(cfg.alpha, k)),
    };
    let mut detector = match cfg.policy {
        PolicyKind::NoCd => None,
        _ => cfg
            .detector
            .map(|d| MucbDetector::with_cadence(d, k, cfg.cadence)),
    };
    let mut solver = cfg.solver.build(&num_states(env));
    let mut state = env.initial_state(rng);
    let mut traj = Trajectory::with_capacity(cfg.policy, cfg.seed, horizon);
    let mut segment_start = 0u64;

    for t in 1..=horizon {
        let explored_arm = exploration.action(t);
        let explored = explored_arm.is_some();
        let action = match explored_arm {
            Some(a) => a,
            None => solver.select(t - segment_start),
        };
        let pull = env.step(&mut state, action, rng)?;
        if !explored || cfg.history == HistoryMode::Shared {
            solver.update(action, pull.observed_state, pull.reward)?;
        }
        let alarm = detector
            .as_mut()
            .is_some_and(|d| d.observe(action, pull.reward));
        traj.steps.push(StepRecord {
            t,
            action,
            observed_state: pull.observed_state,
            reward: pull.reward,
            explored,
            alarm,
        });
        if alarm {
            traj.alarms.push(t);
            traj.resets.push(t);
            segment_start = t;
            exploration.reset(t);
            if let Some(d) = detector.as_mut() {
                d.reset();
            }
            solver.reset();
        }
    }
    Ok(traj)
}

/// Same base solver, no exploration, no detector; reset at every true
/// interior change point `nu_i`, so segment `i` starts from scratch at
/// `nu_i + 1`.
pub fn run_segment_oracle<R: Rng + ?Sized>(
    env: &SegmentedEnvironment,
    cfg: &RunConfig,
    rng: &mut R,
) -> Result<Trajectory> {
    let mut solver = cfg.solver.build(&num_states(env));
    run_with_resets(env, cfg, solver.as_mut(), rng)
}

pub(crate) fn run_with_resets<R: Rng + ?Sized>(
    env: &SegmentedEnvironment,
    cfg: &RunConfig,
    solver: &mut dyn BaseSolver,
    rng: &mut R,
) -> Result<Trajectory> {
    let horizon = env.horizon();
    let cps = env.change_points();
    let interior = &cps[1..cps.len() - 1];
    let mut next_change = interior.iter().copied().peekable();
    let mut state = env.initial_state(rng);
    let mut traj = Trajectory::with_capacity(PolicyKind::SegmentOracle, cfg.seed, horizon);
    let mut segment_start = 0u64;
    for t in 1..=horizon {
        let action = solver.select(t - segment_start);
        let pull = env.step(&mut state, action, rng)?;
        solver.update(action, pull.observed_state, pull.reward)?;
        traj.steps.push(StepRecord {
            t,
            action,
            observed_state: pull.observed_state,
            reward: pull.reward,
            explored: false,
            alarm: false,
        });
        if next_change.peek() == Some(&t) {
            next_change.next();
            traj.resets.push(t);
            segment_start = t;
            solver.reset();
        }
    }
    Ok(traj)
}

/// Pulls `argmax_k mu_k^{(i(t))}` at every step.
pub fn run_best_arm_oracle<R: Rng + ?Sized>(
    env: &SegmentedEnvironment,
    cfg: &RunConfig,
    rng: &mut R,
) -> Result<Trajectory> {
    let horizon = env.horizon();
    let best: Vec<usize> = (0..env.num_segments()).map(|i| env.best_arm(i)).collect();
    let mut state = env.initial_state(rng);
    let mut traj = Trajectory::with_capacity(PolicyKind::BestArmOracle, cfg.seed, horizon);
    for t in 1..=horizon {
        let action = best[env.segment_at(t)];
        let pull = env.step(&mut state, action, rng)?;
        traj.steps.push(StepRecord {
            t,
            action,
            observed_state: pull.observed_state,
            reward: pull.reward,
            explored: false,
            alarm: false,
        });
    }
    Ok(traj)
}

/// Classification of one alarm against the true change points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlarmLabel {
    /// Raised before the first change point.
    FalseAlarm,
    /// First alarm after change `i`, within `h_i`.
    Detection,
    /// First alarm after change `i`, later than `h_i`.
    LateDetection,
    /// A further alarm in a segment that already had one.
    Spurious,
}

impl AlarmLabel {
    pub fn name(self) -> &'static str {
        match self {
            AlarmLabel::FalseAlarm => "false-alarm",
            AlarmLabel::Detection => "detection",
            AlarmLabel::LateDetection => "late-detection",
            AlarmLabel::Spurious => "spurious",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabeledAlarm {
    pub t: u64,
    pub label: AlarmLabel,
    /// 1-based index of the matched change point, if any.
    pub change: Option<usize>,
    /// `tau - nu_i` for the matched change.
    pub delay: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChangeOutcome {
    Detected { alarm: u64, delay: u64 },
    Late { alarm: u64, delay: u64 },
    Missed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlarmReport {
    pub alarms: Vec<LabeledAlarm>,
    /// One entry per interior change point `nu_1 .. nu_{M-1}`.
    pub changes: Vec<ChangeOutcome>,
}

impl AlarmReport {
    pub fn false_alarms(&self) -> usize {
        self.alarms
            .iter()
            .filter(|a| matches!(a.label, AlarmLabel::FalseAlarm | AlarmLabel::Spurious))
            .count()
    }

    pub fn detections(&self) -> usize {
        self.changes
            .iter()
            .filter(|c| matches!(c, ChangeOutcome::Detected { .. }))
            .count()
    }
}

/// Matches each alarm to the latest change point at or before it. `h[i]` is
/// the delay allowance of interior change `i + 1`.
pub fn classify_alarms(alarms: &[u64], env: &SegmentedEnvironment, h: &[u64]) -> AlarmReport {
    let cps = env.change_points();
    let interior = &cps[1..cps.len() - 1];
    let mut changes = vec![ChangeOutcome::Missed; interior.len()];
    let mut labeled = Vec::with_capacity(alarms.len());
    for &tau in alarms {
        // Number of interior change points <= tau.
        let matched = interior.partition_point(|&nu| nu <= tau);
        if matched == 0 {
            labeled.push(LabeledAlarm {
                t: tau,
                label: AlarmLabel::FalseAlarm,
                change: None,
                delay: None,
            });
            continue;
        }
        let i = matched - 1;
        let delay = tau - interior[i];
        let label = match changes[i] {
            ChangeOutcome::Missed => {
                let allowance = h.get(i).copied().unwrap_or(u64::MAX);
                if delay <= allowance {
                    changes[i] = ChangeOutcome::Detected { alarm: tau, delay };
                    AlarmLabel::Detection
                } else {
                    changes[i] = ChangeOutcome::Late { alarm: tau, delay };
                    AlarmLabel::LateDetection
                }
            }
            _ => AlarmLabel::Spurious,
        };
        labeled.push(LabeledAlarm {
            t: tau,
            label,
            change: Some(matched),
            delay: Some(delay),
        });
    }
    AlarmReport {
        alarms: labeled,
        changes,
    }
}
