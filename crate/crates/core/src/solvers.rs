//! Stationary base solvers behind a select / update / reset contract.
//!
//! Both solvers are deterministic given their input stream. `t` passed to
//! [`BaseSolver::select`] is the solver's own clock: steps since its last
//! reset, starting at 1.

use serde::{Deserialize, Serialize};

use crate::env::argmax_first;
use crate::env::chain;
use crate::error::{Error, Result};

/// Index `mean + scale * sqrt(ln t / n)`. Shared by both solvers so that the
/// one-state model-based solver reproduces UCB1 bit for bit.
fn ucb_index(mean: f64, pulls: u64, t: u64, scale: f64) -> f64 {
    let t = t.max(1) as f64;
    mean + scale * (t.ln() / pulls as f64).sqrt()
}

pub const UCB1_SCALE: f64 = std::f64::consts::SQRT_2;

pub trait BaseSolver: Send {
    fn num_arms(&self) -> usize;

    /// Arm to pull at local time `t >= 1`.
    fn select(&mut self, t: u64) -> usize;

    /// Feeds back the observed state and reward of a pull.
    fn update(&mut self, arm: usize, state: usize, reward: f64) -> Result<()>;

    /// Forgets everything; afterwards the solver behaves as freshly built.
    fn reset(&mut self);

    fn history(&self) -> &SolverHistory;
}

/// Pull counts and reward sums since the last reset.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolverHistory {
    pub pulls: Vec<u64>,
    pub reward_sums: Vec<f64>,
    pub total: u64,
}

impl SolverHistory {
    pub fn new(num_arms: usize) -> Self {
        Self {
            pulls: vec![0; num_arms],
            reward_sums: vec![0.0; num_arms],
            total: 0,
        }
    }

    pub fn empirical_mean(&self, arm: usize) -> Option<f64> {
        (self.pulls[arm] > 0).then(|| self.reward_sums[arm] / self.pulls[arm] as f64)
    }

    fn record(&mut self, arm: usize, reward: f64) -> Result<()> {
        if arm >= self.pulls.len() {
            return Err(Error::InvalidArm {
                arm,
                num_arms: self.pulls.len(),
            });
        }
        if !(0.0..=1.0).contains(&reward) {
            return Err(Error::RewardOutOfRange(reward));
        }
        self.pulls[arm] += 1;
        self.reward_sums[arm] += reward;
        self.total += 1;
        Ok(())
    }
}

/// UCB1 with index `mean + sqrt(2 ln t / n)`; untried arms first, ties to the
/// lowest index.
#[derive(Debug, Clone, PartialEq)]
pub struct Ucb1 {
    history: SolverHistory,
}

impl Ucb1 {
    pub fn new(num_arms: usize) -> Self {
        Self {
            history: SolverHistory::new(num_arms),
        }
    }
}

impl BaseSolver for Ucb1 {
    fn num_arms(&self) -> usize {
        self.history.pulls.len()
    }

    fn select(&mut self, t: u64) -> usize {
        let h = &self.history;
        if let Some(untried) = h.pulls.iter().position(|&n| n == 0) {
            return untried;
        }
        let index: Vec<f64> = (0..h.pulls.len())
            .map(|k| ucb_index(h.reward_sums[k] / h.pulls[k] as f64, h.pulls[k], t, UCB1_SCALE))
            .collect();
        argmax_first(&index)
    }

    fn update(&mut self, arm: usize, _state: usize, reward: f64) -> Result<()> {
        self.history.record(arm, reward)
    }

    fn reset(&mut self) {
        self.history = SolverHistory::new(self.history.pulls.len());
    }

    fn history(&self) -> &SolverHistory {
        &self.history
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ArmModel {
    transitions: Vec<Vec<u64>>,
    state_visits: Vec<u64>,
    state_reward_sums: Vec<f64>,
    last_state: Option<usize>,
    cached_mean: Option<f64>,
}

impl ArmModel {
    fn new(num_states: usize) -> Self {
        Self {
            transitions: vec![vec![0; num_states]; num_states],
            state_visits: vec![0; num_states],
            state_reward_sums: vec![0.0; num_states],
            last_state: None,
            cached_mean: None,
        }
    }

    fn qualified(&self, m_min: u64) -> bool {
        self.state_visits.iter().all(|&v| v >= m_min)
    }

    /// Steady-state mean of the empirical model: stationary distribution of the
    /// row-normalized transition counts dotted with per-state reward means.
    /// Rows without data are uniform; a singular system falls back to visit
    /// frequencies.
    fn stationary_mean(&mut self) -> f64 {
        if let Some(m) = self.cached_mean {
            return m;
        }
        let s = self.state_visits.len();
        let rewards: Vec<f64> = self
            .state_reward_sums
            .iter()
            .zip(&self.state_visits)
            .map(|(&sum, &n)| if n > 0 { sum / n as f64 } else { 0.0 })
            .collect();
        let kernel: Vec<Vec<f64>> = self
            .transitions
            .iter()
            .map(|row| {
                let n: u64 = row.iter().sum();
                if n == 0 {
                    vec![1.0 / s as f64; s]
                } else {
                    row.iter().map(|&c| c as f64 / n as f64).collect()
                }
            })
            .collect();
        let d = chain::solve_stationary(&kernel)
            .filter(|d| d.iter().all(|x| x.is_finite()))
            .unwrap_or_else(|| {
                let total: u64 = self.state_visits.iter().sum();
                self.state_visits
                    .iter()
                    .map(|&v| v as f64 / total.max(1) as f64)
                    .collect()
            });
        let m = d.iter().zip(&rewards).map(|(a, b)| a * b).sum::<f64>();
        self.cached_mean = Some(m);
        m
    }
}

/// Optimistic model-based restless solver.
///
/// Each arm's kernel is estimated from consecutive observed states of that
/// arm and each state's reward mean from the rewards seen in it. Arms where
/// some state has fewer than `m_min` visits are pulled first (fewest pulls,
/// then lowest index). Otherwise the arm maximizing
/// `stationary_mean + bonus_scale * sqrt(ln t / n_k)` is chosen.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGreedy {
    bonus_scale: f64,
    m_min: u64,
    history: SolverHistory,
    arms: Vec<ArmModel>,
}

impl ModelGreedy {
    pub fn new(num_states: &[usize], bonus_scale: f64, m_min: u64) -> Self {
        Self {
            bonus_scale,
            m_min,
            history: SolverHistory::new(num_states.len()),
            arms: num_states.iter().map(|&s| ArmModel::new(s)).collect(),
        }
    }

    pub fn m_min(&self) -> u64 {
        self.m_min
    }

    /// Empirical steady-state mean of `arm`.
    pub fn model_mean(&mut self, arm: usize) -> f64 {
        self.arms[arm].stationary_mean()
    }
}

impl BaseSolver for ModelGreedy {
    fn num_arms(&self) -> usize {
        self.arms.len()
    }

    fn select(&mut self, t: u64) -> usize {
        let m_min = self.m_min;
        let pulls = &self.history.pulls;
        let warmup = self
            .arms
            .iter()
            .enumerate()
            .filter(|(_, a)| !a.qualified(m_min))
            .min_by_key(|&(k, _)| (pulls[k], k))
            .map(|(k, _)| k);
        if let Some(k) = warmup {
            return k;
        }
        let pulls = self.history.pulls.clone();
        let scale = self.bonus_scale;
        let index: Vec<f64> = self
            .arms
            .iter_mut()
            .enumerate()
            .map(|(k, a)| ucb_index(a.stationary_mean(), pulls[k], t, scale))
            .collect();
        argmax_first(&index)
    }

    fn update(&mut self, arm: usize, state: usize, reward: f64) -> Result<()> {
        self.history.record(arm, reward)?;
        let model = &mut self.arms[arm];
        let num_states = model.state_visits.len();
        if state >= num_states {
            return Err(Error::DimensionMismatch {
                expected: num_states,
                got: state + 1,
            });
        }
        if let Some(prev) = model.last_state {
            model.transitions[prev][state] += 1;
        }
        model.last_state = Some(state);
        model.state_visits[state] += 1;
        model.state_reward_sums[state] += reward;
        model.cached_mean = None;
        Ok(())
    }

    fn reset(&mut self) {
        self.history = SolverHistory::new(self.arms.len());
        for a in &mut self.arms {
            *a = ArmModel::new(a.state_visits.len());
        }
    }

    fn history(&self) -> &SolverHistory {
        &self.history
    }
}

/// Which base solver to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    Ucb1,
    #[default]
    ModelGreedy,
}

/// Solver choice plus its tuning knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSpec {
    pub kind: SolverKind,
    pub bonus_scale: f64,
    pub m_min: u64,
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self {
            kind: SolverKind::ModelGreedy,
            bonus_scale: UCB1_SCALE,
            m_min: 100,
        }
    }
}

impl SolverSpec {
    pub fn build(&self, num_states: &[usize]) -> Box<dyn BaseSolver> {
        match self.kind {
            SolverKind::Ucb1 => Box::new(Ucb1::new(num_states.len())),
            SolverKind::ModelGreedy => {
                Box::new(ModelGreedy::new(num_states, self.bonus_scale, self.m_min))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn feed(s: &mut dyn BaseSolver, arm: usize, rewards: &[f64]) {
        for &r in rewards {
            s.update(arm, 0, r).unwrap();
        }
    }

    #[test]
    fn untried_arms_first_in_order() {
        let mut s = Ucb1::new(3);
        assert_eq!(s.select(1), 0);
        s.update(0, 0, 1.0).unwrap();
        assert_eq!(s.select(2), 1);
        s.update(1, 0, 1.0).unwrap();
        assert_eq!(s.select(3), 2);
    }

    #[test]
    fn larger_bonus_wins_at_equal_means() {
        // 0.5 + sqrt(2 ln 100 / 10) = 1.459 vs 0.5 + sqrt(2 ln 100 / 2) = 2.646
        let mut s = Ucb1::new(2);
        feed(&mut s, 0, &[0.5; 10]);
        feed(&mut s, 1, &[0.5; 2]);
        assert_eq!(s.select(100), 1);
    }

    #[test]
    fn untried_beats_perfect_arm() {
        let mut s = Ucb1::new(2);
        feed(&mut s, 0, &[1.0; 1000]);
        assert_eq!(s.select(1001), 1);
    }

    #[test]
    fn running_mean_and_counts() {
        let mut s = Ucb1::new(2);
        feed(&mut s, 0, &[0.2, 0.4, 0.9]);
        feed(&mut s, 1, &[1.0; 7]);
        let h = s.history();
        assert!((h.empirical_mean(0).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(h.empirical_mean(1), Some(1.0));
        assert_eq!(h.pulls, vec![3, 7]);
    }

    #[test]
    fn reward_out_of_range_rejected() {
        let mut s = Ucb1::new(1);
        assert!(matches!(s.update(0, 0, 1.5), Err(Error::RewardOutOfRange(_))));
        assert!(matches!(s.update(0, 0, f64::NAN), Err(Error::RewardOutOfRange(_))));
        let mut g = ModelGreedy::new(&[2], UCB1_SCALE, 1);
        assert!(matches!(g.update(0, 0, -0.1), Err(Error::RewardOutOfRange(_))));
    }

    #[test]
    fn reset_twice_equals_reset_once() {
        let mut g = ModelGreedy::new(&[2, 3], 1.0, 5);
        g.update(0, 1, 0.5).unwrap();
        g.update(1, 2, 0.3).unwrap();
        g.reset();
        let once = g.clone();
        g.reset();
        assert_eq!(g, once);
        assert_eq!(g, ModelGreedy::new(&[2, 3], 1.0, 5));
    }

    #[test]
    fn higher_model_mean_wins() {
        let mut g = ModelGreedy::new(&[2, 2], UCB1_SCALE, 1);
        // Arm 0 alternates states with rewards 0.8 in both; arm 1 rewards 0.2.
        for i in 0..500 {
            g.update(0, i % 2, 0.8).unwrap();
            g.update(1, i % 2, 0.2).unwrap();
        }
        assert!((g.model_mean(0) - 0.8).abs() < 1e-12);
        assert_eq!(g.select(1000), 0);
    }

    #[test]
    fn model_mean_uses_empirical_kernel() {
        // Observed state path 0,0,0,1,0,0,0,1,... gives P = [[2/3,1/3],[1,0]],
        // whose stationary law is (3/4, 1/4).
        let mut g = ModelGreedy::new(&[2], UCB1_SCALE, 1);
        for i in 0..4000 {
            let s = usize::from(i % 4 == 3);
            g.update(0, s, if s == 0 { 0.0 } else { 1.0 }).unwrap();
        }
        assert!((g.model_mean(0) - 0.25).abs() < 1e-3);
    }

    #[test]
    fn warmup_floor_honored() {
        let mut g = ModelGreedy::new(&[3, 3, 3], UCB1_SCALE, 100);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for t in 1..=600u64 {
            let k = g.select(t);
            g.update(k, rng.gen_range(0..3), 0.5).unwrap();
        }
        // No arm can be exploited before each of its states has 100 visits,
        // so pulls stay balanced during warm-up.
        let p = &g.history().pulls;
        assert!(p.iter().max().unwrap() - p.iter().min().unwrap() <= 1, "{p:?}");
    }

    #[test]
    fn one_state_model_greedy_matches_ucb1() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let means = [0.3, 0.5, 0.55];
        let mut ucb = Ucb1::new(3);
        let mut greedy = ModelGreedy::new(&[1, 1, 1], UCB1_SCALE, 1);
        for t in 1..=2000u64 {
            let a = ucb.select(t);
            let b = greedy.select(t);
            assert_eq!(a, b, "diverged at t={t}");
            let r = if rng.gen::<f64>() < means[a] { 1.0 } else { 0.0 };
            ucb.update(a, 0, r).unwrap();
            greedy.update(b, 0, r).unwrap();
        }
    }

    #[test]
    fn argmax_invariant_to_common_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let pulls: Vec<u64> = (0..4).map(|_| rng.gen_range(1..50)).collect();
            let means: Vec<f64> = (0..4).map(|_| rng.gen::<f64>()).collect();
            let t = pulls.iter().sum::<u64>();
            let pick = |c: f64| {
                let idx: Vec<f64> = (0..4)
                    .map(|k| ucb_index(c * means[k], pulls[k], t, c * UCB1_SCALE))
                    .collect();
                argmax_first(&idx)
            };
            assert_eq!(pick(1.0), pick(3.5));
        }
    }

    #[test]
    fn ucb1_regret_grows_logarithmically() {
        // Suboptimal pulls at T and 16T differ by roughly a constant times
        // ln 16, far less than the 16x of linear growth.
        let means = [0.4, 0.6];
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut counts_at = Vec::new();
        let mut s = Ucb1::new(2);
        for t in 1..=64_000u64 {
            let a = s.select(t);
            let r = if rng.gen::<f64>() < means[a] { 1.0 } else { 0.0 };
            s.update(a, 0, r).unwrap();
            if t == 4_000 || t == 64_000 {
                counts_at.push(s.history().pulls[0] as f64);
            }
        }
        let ratio = counts_at[1] / counts_at[0];
        assert!(ratio < 4.0, "suboptimal pulls grew by {ratio}");
    }
}
