//! Segmented restless Markov environments.
//!
//! Every arm is a finite Markov chain whose kernel and per-state reward means
//! are fixed inside a segment `(nu_{i-1}, nu_i]` and may change at the change
//! points. All arms transition on every step whether pulled or not. States
//! carry over across change points; only the kernels and rewards switch.

pub mod chain;
pub mod config;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use chain::{
    arm_mean, mixing_time, slem, stationary_distribution, ChainSummary, DEFAULT_MIXING_EPS,
};

/// One arm's chain within one segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovArmSpec {
    transition: Vec<Vec<f64>>,
    reward_means: Vec<f64>,
}

impl MarkovArmSpec {
    pub fn new(transition: Vec<Vec<f64>>, reward_means: Vec<f64>) -> Result<Self> {
        chain::check_row_stochastic(&transition)?;
        if reward_means.len() != transition.len() {
            return Err(Error::DimensionMismatch {
                expected: transition.len(),
                got: reward_means.len(),
            });
        }
        if let Some(r) = reward_means.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::RewardOutOfRange(*r));
        }
        Ok(Self {
            transition,
            reward_means,
        })
    }

    /// A single-state arm: the classical stationary bandit arm with mean `mean`.
    pub fn one_state(mean: f64) -> Result<Self> {
        Self::new(vec![vec![1.0]], vec![mean])
    }

    pub fn num_states(&self) -> usize {
        self.transition.len()
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.transition
    }

    pub fn reward_means(&self) -> &[f64] {
        &self.reward_means
    }
}

/// How a realized reward is drawn around the per-state mean `m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardNoise {
    /// Reward is 1 with probability `m`, else 0.
    #[default]
    Bernoulli,
    /// Reward equals `m`.
    None,
    /// Uniform on `[m - r, m + r]` with `r = min(m, 1 - m)`.
    TruncatedUniform,
}

impl RewardNoise {
    pub fn sample<R: Rng + ?Sized>(self, mean: f64, rng: &mut R) -> f64 {
        match self {
            RewardNoise::Bernoulli => {
                if rng.gen::<f64>() < mean {
                    1.0
                } else {
                    0.0
                }
            }
            RewardNoise::None => mean,
            RewardNoise::TruncatedUniform => {
                let half = mean.min(1.0 - mean);
                (mean + half * (2.0 * rng.gen::<f64>() - 1.0)).clamp(0.0, 1.0)
            }
        }
    }
}

/// Current per-arm states of a running environment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnvState {
    /// Number of steps already taken; the next pull happens at `t + 1`.
    pub t: u64,
    pub states: Vec<usize>,
}

/// Outcome of one pull.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pull {
    pub observed_state: usize,
    pub reward: f64,
}

/// K arms over M segments. Immutable after construction.
#[derive(Debug, Clone)]
pub struct SegmentedEnvironment {
    change_points: Vec<u64>,
    /// `specs[i][k]`: segment `i`, arm `k`.
    specs: Vec<Vec<MarkovArmSpec>>,
    noise: RewardNoise,
    initial_state_dist: Vec<Vec<f64>>,
    stationary: Vec<Vec<Vec<f64>>>,
    arm_means: Vec<Vec<f64>>,
}

impl SegmentedEnvironment {
    /// Builds and validates an environment. `initial_state_dist = None` means
    /// uniform over each arm's states.
    pub fn new(
        specs: Vec<Vec<MarkovArmSpec>>,
        change_points: Vec<u64>,
        noise: RewardNoise,
        initial_state_dist: Option<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let num_segments = specs.len();
        if num_segments == 0 {
            return Err(Error::InvalidEnvironment("no segments".into()));
        }
        let num_arms = specs[0].len();
        if num_arms == 0 {
            return Err(Error::InvalidEnvironment("no arms".into()));
        }
        if let Some(i) = specs.iter().position(|seg| seg.len() != num_arms) {
            return Err(Error::InvalidEnvironment(format!(
                "segment {i} has {} arms, expected {num_arms}",
                specs[i].len()
            )));
        }
        check_change_points(&change_points, num_segments)?;
        let state_counts: Vec<usize> = specs[0].iter().map(MarkovArmSpec::num_states).collect();
        for (i, seg) in specs.iter().enumerate() {
            for (k, spec) in seg.iter().enumerate() {
                if spec.num_states() != state_counts[k] {
                    return Err(Error::InvalidEnvironment(format!(
                        "arm {k} has {} states in segment {i} but {} in segment 0",
                        spec.num_states(),
                        state_counts[k]
                    )));
                }
            }
        }

        let initial_state_dist = match initial_state_dist {
            None => state_counts
                .iter()
                .map(|&s| vec![1.0 / s as f64; s])
                .collect(),
            Some(dists) => {
                if dists.len() != num_arms {
                    return Err(Error::DimensionMismatch {
                        expected: num_arms,
                        got: dists.len(),
                    });
                }
                for (k, d) in dists.iter().enumerate() {
                    if d.len() != state_counts[k] {
                        return Err(Error::DimensionMismatch {
                            expected: state_counts[k],
                            got: d.len(),
                        });
                    }
                    let sum: f64 = d.iter().sum();
                    if d.iter().any(|x| !(0.0..=1.0).contains(x))
                        || (sum - 1.0).abs() > chain::ROW_SUM_TOL
                    {
                        return Err(Error::InvalidEnvironment(format!(
                            "initial state distribution of arm {k} is not a distribution"
                        )));
                    }
                }
                dists
            }
        };

        let mut stationary = Vec::with_capacity(num_segments);
        let mut arm_means = Vec::with_capacity(num_segments);
        for seg in &specs {
            let mut seg_d = Vec::with_capacity(num_arms);
            let mut seg_m = Vec::with_capacity(num_arms);
            for spec in seg {
                let d = stationary_distribution(spec.transition())?;
                seg_m.push(arm_mean(&d, spec.reward_means())?);
                seg_d.push(d);
            }
            stationary.push(seg_d);
            arm_means.push(seg_m);
        }

        Ok(Self {
            change_points,
            specs,
            noise,
            initial_state_dist,
            stationary,
            arm_means,
        })
    }

    /// Same as [`SegmentedEnvironment::new`] with change points `nu_i = i T / M`.
    pub fn with_equal_spacing(
        specs: Vec<Vec<MarkovArmSpec>>,
        horizon: u64,
        noise: RewardNoise,
    ) -> Result<Self> {
        let cps = equal_change_points(horizon, specs.len());
        Self::new(specs, cps, noise, None)
    }

    pub fn num_arms(&self) -> usize {
        self.specs[0].len()
    }

    pub fn num_segments(&self) -> usize {
        self.specs.len()
    }

    pub fn horizon(&self) -> u64 {
        *self.change_points.last().expect("validated non-empty")
    }

    pub fn change_points(&self) -> &[u64] {
        &self.change_points
    }

    pub fn noise(&self) -> RewardNoise {
        self.noise
    }

    pub fn spec(&self, segment: usize, arm: usize) -> &MarkovArmSpec {
        &self.specs[segment][arm]
    }

    pub fn specs(&self) -> &[Vec<MarkovArmSpec>] {
        &self.specs
    }

    pub fn initial_state_dist(&self) -> &[Vec<f64>] {
        &self.initial_state_dist
    }

    pub fn num_states(&self, arm: usize) -> usize {
        self.specs[0][arm].num_states()
    }

    /// Length `s_i = nu_i - nu_{i-1}` of segment `segment` (0-based).
    pub fn segment_length(&self, segment: usize) -> u64 {
        self.change_points[segment + 1] - self.change_points[segment]
    }

    /// 0-based segment index of 1-based time `t`: the `i` with
    /// `nu_i < t <= nu_{i+1}`.
    pub fn segment_at(&self, t: u64) -> usize {
        debug_assert!(t >= 1 && t <= self.horizon());
        // First interior change point >= t.
        let interior = &self.change_points[1..self.change_points.len() - 1];
        interior.partition_point(|&nu| nu < t)
    }

    pub fn stationary(&self, segment: usize, arm: usize) -> &[f64] {
        &self.stationary[segment][arm]
    }

    /// Steady-state arm means of one segment.
    pub fn arm_means(&self, segment: usize) -> &[f64] {
        &self.arm_means[segment]
    }

    /// Lowest-index arm with the largest steady-state mean in `segment`.
    pub fn best_arm(&self, segment: usize) -> usize {
        argmax_first(&self.arm_means[segment])
    }

    pub fn best_mean(&self, segment: usize) -> f64 {
        self.arm_means[segment][self.best_arm(segment)]
    }

    pub fn summary(&self, segment: usize, arm: usize, eps: f64) -> Result<ChainSummary> {
        let spec = &self.specs[segment][arm];
        chain::summarize(spec.transition(), spec.reward_means(), eps)
    }

    /// `L = max_{i,k} L^{(i,k)}`.
    pub fn mixing_bound(&self, eps: f64) -> Result<f64> {
        let mut worst = 0.0f64;
        for seg in &self.specs {
            for spec in seg {
                worst = worst.max(mixing_time(spec.transition(), eps)?);
            }
        }
        Ok(worst)
    }

    /// `delta^{(i)} = max_k |mu_k^{(i+1)} - mu_k^{(i)}|` for each interior
    /// change point.
    pub fn mean_shifts(&self) -> Vec<f64> {
        self.arm_means
            .windows(2)
            .map(|w| {
                w[0].iter()
                    .zip(&w[1])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .collect()
    }

    /// Samples initial states from the initial state distribution.
    pub fn initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> EnvState {
        let states = self
            .initial_state_dist
            .iter()
            .map(|d| sample_index(d, rng))
            .collect();
        EnvState { t: 0, states }
    }

    /// Pulls `arm` at time `state.t + 1`: reports the arm's current state and a
    /// reward drawn around that state's mean, then moves every arm one step
    /// under the active segment's kernels.
    pub fn step<R: Rng + ?Sized>(&self, state: &mut EnvState, arm: usize, rng: &mut R) -> Result<Pull> {
        let horizon = self.horizon();
        if state.t >= horizon {
            return Err(Error::HorizonExceeded {
                t: state.t + 1,
                horizon,
            });
        }
        let num_arms = self.num_arms();
        if arm >= num_arms {
            return Err(Error::InvalidArm { arm, num_arms });
        }
        let t = state.t + 1;
        let segment = &self.specs[self.segment_at(t)];
        let observed_state = state.states[arm];
        let mean = segment[arm].reward_means()[observed_state];
        let reward = self.noise.sample(mean, rng);
        for (s, spec) in state.states.iter_mut().zip(segment) {
            *s = sample_index(&spec.transition()[*s], rng);
        }
        state.t = t;
        Ok(Pull {
            observed_state,
            reward,
        })
    }
}

pub fn equal_change_points(horizon: u64, num_segments: usize) -> Vec<u64> {
    let m = num_segments as u64;
    (0..=m).map(|i| (i * horizon) / m.max(1)).collect()
}

fn check_change_points(cps: &[u64], num_segments: usize) -> Result<()> {
    if cps.len() != num_segments + 1 {
        return Err(Error::InvalidEnvironment(format!(
            "expected {} change points (including 0 and T), got {}",
            num_segments + 1,
            cps.len()
        )));
    }
    if cps[0] != 0 {
        return Err(Error::InvalidEnvironment("first change point must be 0".into()));
    }
    if let Some(i) = cps.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::InvalidEnvironment(format!(
            "change points must be strictly increasing (index {})",
            i + 1
        )));
    }
    Ok(())
}

pub(crate) fn argmax_first(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    if weights.len() == 1 {
        return 0;
    }
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    // Rounding left `u` above the accumulated mass: fall back to the last
    // state with positive probability.
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(weights.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_state(p: f64, q: f64, r: [f64; 2]) -> MarkovArmSpec {
        MarkovArmSpec::new(vec![vec![1.0 - p, p], vec![q, 1.0 - q]], r.to_vec()).unwrap()
    }

    #[test]
    fn segment_lookup_is_exclusive_and_exhaustive() {
        let specs = vec![vec![MarkovArmSpec::one_state(0.5).unwrap()]; 3];
        let env = SegmentedEnvironment::new(specs, vec![0, 3, 7, 10], RewardNoise::None, None)
            .unwrap();
        let segs: Vec<usize> = (1..=10).map(|t| env.segment_at(t)).collect();
        assert_eq!(segs, vec![0, 0, 0, 1, 1, 1, 1, 2, 2, 2]);
    }

    #[test]
    fn bad_change_points_rejected() {
        let specs = vec![vec![MarkovArmSpec::one_state(0.5).unwrap()]; 2];
        for cps in [vec![0, 5], vec![1, 5, 10], vec![0, 5, 5], vec![0, 6, 4]] {
            assert!(SegmentedEnvironment::new(specs.clone(), cps, RewardNoise::None, None).is_err());
        }
    }

    #[test]
    fn non_ergodic_arm_rejected() {
        let id = MarkovArmSpec::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.1, 0.9]).unwrap();
        let err = SegmentedEnvironment::with_equal_spacing(vec![vec![id]], 10, RewardNoise::None)
            .unwrap_err();
        assert!(matches!(err, Error::NotErgodic(_)));
    }

    #[test]
    fn state_count_must_match_across_segments() {
        let a = two_state(0.1, 0.2, [0.1, 0.9]);
        let b = MarkovArmSpec::one_state(0.3).unwrap();
        assert!(SegmentedEnvironment::with_equal_spacing(vec![vec![a], vec![b]], 10, RewardNoise::None).is_err());
    }

    #[test]
    fn zero_noise_reward_equals_state_mean() {
        let arm = two_state(0.3, 0.4, [0.25, 0.75]);
        let env =
            SegmentedEnvironment::with_equal_spacing(vec![vec![arm]], 200, RewardNoise::None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut st = env.initial_state(&mut rng);
        for _ in 0..200 {
            let s = st.states[0];
            let pull = env.step(&mut st, 0, &mut rng).unwrap();
            assert_eq!(pull.observed_state, s);
            assert_eq!(pull.reward, [0.25, 0.75][s]);
        }
        assert!(matches!(
            env.step(&mut st, 0, &mut rng),
            Err(Error::HorizonExceeded { t: 201, horizon: 200 })
        ));
    }

    #[test]
    fn one_state_arm_mean_is_its_reward() {
        let env = SegmentedEnvironment::with_equal_spacing(
            vec![vec![
                MarkovArmSpec::one_state(0.2).unwrap(),
                MarkovArmSpec::one_state(0.8).unwrap(),
            ]],
            10,
            RewardNoise::Bernoulli,
        )
        .unwrap();
        assert_eq!(env.arm_means(0), &[0.2, 0.8]);
        assert_eq!(env.best_arm(0), 1);
    }

    #[test]
    fn bernoulli_empirical_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let total: f64 = (0..n).map(|_| RewardNoise::Bernoulli.sample(0.8, &mut rng)).sum();
        assert!((total / n as f64 - 0.8).abs() < 0.01);
    }

    #[test]
    fn truncated_uniform_stays_in_range_with_right_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for m in [0.0, 0.1, 0.5, 0.93, 1.0] {
            let n = 50_000;
            let mut total = 0.0;
            for _ in 0..n {
                let r = RewardNoise::TruncatedUniform.sample(m, &mut rng);
                assert!((0.0..=1.0).contains(&r));
                total += r;
            }
            assert!((total / n as f64 - m).abs() < 0.01);
        }
    }

    #[test]
    fn invalid_arm_rejected() {
        let env = SegmentedEnvironment::with_equal_spacing(
            vec![vec![MarkovArmSpec::one_state(0.5).unwrap()]],
            5,
            RewardNoise::None,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut st = env.initial_state(&mut rng);
        assert!(matches!(env.step(&mut st, 1, &mut rng), Err(Error::InvalidArm { .. })));
    }

    #[test]
    fn unpulled_arm_keeps_moving() {
        // Arm 1 is never pulled; its empirical state frequencies must still
        // approach its stationary distribution (2/3, 1/3).
        let a0 = MarkovArmSpec::one_state(0.5).unwrap();
        let a1 = two_state(0.1, 0.2, [0.0, 1.0]);
        let n = 200_000u64;
        let env =
            SegmentedEnvironment::with_equal_spacing(vec![vec![a0, a1]], n, RewardNoise::None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut st = env.initial_state(&mut rng);
        let mut counts = [0u64; 2];
        for _ in 0..n {
            counts[st.states[1]] += 1;
            env.step(&mut st, 0, &mut rng).unwrap();
        }
        let freq0 = counts[0] as f64 / n as f64;
        assert!((freq0 - 2.0 / 3.0).abs() < 0.01, "freq0 = {freq0}");
    }

    #[test]
    fn states_persist_across_change_points() {
        // Segment 0 pins both states to state 1 (absorbing-like fast return);
        // the state observed right after the change is the one left behind.
        let seg0 = two_state(0.99, 0.01, [0.0, 1.0]);
        let seg1 = two_state(0.5, 0.5, [0.0, 1.0]);
        let env = SegmentedEnvironment::new(
            vec![vec![seg0], vec![seg1]],
            vec![0, 5, 10],
            RewardNoise::None,
            Some(vec![vec![0.0, 1.0]]),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut st = env.initial_state(&mut rng);
        for _ in 0..5 {
            env.step(&mut st, 0, &mut rng).unwrap();
        }
        let carried = st.states[0];
        let pull = env.step(&mut st, 0, &mut rng).unwrap();
        assert_eq!(pull.observed_state, carried);
    }
}
