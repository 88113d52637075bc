//! Standard and excess regret, plus trial aggregation.

use crate::env::SegmentedEnvironment;
use crate::error::{Error, Result};
use crate::orchestrate::{PolicyKind, Trajectory};

/// Compensated running sum (Neumaier), so the order of a long reduction does
/// not move the result beyond rounding of the final value.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Per-trial regret bookkeeping for one policy.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretLedger {
    pub trial: u64,
    pub policy: PolicyKind,
    /// `max_k mu_k` of the segment containing each step.
    pub benchmark: Vec<f64>,
    pub rewards: Vec<f64>,
    pub cum_reward: Vec<f64>,
    pub cum_std_regret: Vec<f64>,
}

impl RegretLedger {
    pub fn new(trial: u64, traj: &Trajectory, env: &SegmentedEnvironment) -> Result<Self> {
        let benchmark = benchmark_series(env);
        let rewards: Vec<f64> = traj.rewards().collect();
        let cum_std_regret = standard_regret(traj, env)?;
        Ok(Self {
            trial,
            policy: traj.policy,
            benchmark,
            cum_reward: cumulative(&rewards),
            rewards,
            cum_std_regret,
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// `max_k mu_k^{(i(t))}` for `t = 1..=T`.
pub fn benchmark_series(env: &SegmentedEnvironment) -> Vec<f64> {
    (1..=env.horizon())
        .map(|t| env.best_mean(env.segment_at(t)))
        .collect()
}

/// Running compensated sums of `xs`.
pub fn cumulative(xs: &[f64]) -> Vec<f64> {
    let mut acc = NeumaierSum::default();
    xs.iter()
        .map(|&x| {
            acc.add(x);
            acc.value()
        })
        .collect()
}

/// Cumulative `sum_{s <= t} (max_k mu_k^{(i(s))} - r_s)`.
pub fn standard_regret(traj: &Trajectory, env: &SegmentedEnvironment) -> Result<Vec<f64>> {
    let horizon = env.horizon() as usize;
    if traj.len() != horizon {
        return Err(Error::LengthMismatch {
            left: traj.len(),
            right: horizon,
        });
    }
    let gaps: Vec<f64> = traj
        .steps
        .iter()
        .map(|s| env.best_mean(env.segment_at(s.t)) - s.reward)
        .collect();
    Ok(cumulative(&gaps))
}

/// Cumulative `sum (oracle - policy)` of two per-step mean-reward series.
pub fn excess_regret(policy_mean_reward: &[f64], oracle_mean_reward: &[f64]) -> Result<Vec<f64>> {
    if policy_mean_reward.len() != oracle_mean_reward.len() {
        return Err(Error::LengthMismatch {
            left: policy_mean_reward.len(),
            right: oracle_mean_reward.len(),
        });
    }
    let gaps: Vec<f64> = oracle_mean_reward
        .iter()
        .zip(policy_mean_reward)
        .map(|(o, p)| o - p)
        .collect();
    Ok(cumulative(&gaps))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub mean: Vec<f64>,
    /// Standard error of the mean (sample std with `n - 1`, over `sqrt(n)`);
    /// zero for a single trial.
    pub se: Vec<f64>,
    pub trials: usize,
}

/// Pointwise mean and standard error over equally long series.
pub fn aggregate<S: AsRef<[f64]>>(trials: &[S]) -> Result<Aggregate> {
    let first = trials.first().ok_or(Error::EmptyInput)?.as_ref().len();
    for s in trials {
        if s.as_ref().len() != first {
            return Err(Error::LengthMismatch {
                left: s.as_ref().len(),
                right: first,
            });
        }
    }
    let n = trials.len();
    let mut mean = Vec::with_capacity(first);
    let mut se = Vec::with_capacity(first);
    for t in 0..first {
        let mut sum = NeumaierSum::default();
        for s in trials {
            sum.add(s.as_ref()[t]);
        }
        let m = sum.value() / n as f64;
        let std_err = if n > 1 {
            let mut sq = NeumaierSum::default();
            for s in trials {
                let d = s.as_ref()[t] - m;
                sq.add(d * d);
            }
            (sq.value() / (n - 1) as f64).sqrt() / (n as f64).sqrt()
        } else {
            0.0
        };
        mean.push(m);
        se.push(std_err);
    }
    Ok(Aggregate {
        mean,
        se,
        trials: n,
    })
}

/// Pointwise mean only.
pub fn mean_series<S: AsRef<[f64]>>(trials: &[S]) -> Result<Vec<f64>> {
    Ok(aggregate(trials)?.mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{MarkovArmSpec, RewardNoise};
    use crate::orchestrate::StepRecord;
    use proptest::prelude::*;

    fn fixed_env(means: &[f64], horizon: u64, noise: RewardNoise) -> SegmentedEnvironment {
        let specs = vec![means.iter().map(|&m| MarkovArmSpec::one_state(m).unwrap()).collect()];
        SegmentedEnvironment::new(specs, vec![0, horizon], noise, None).unwrap()
    }

    fn constant_trajectory(action: usize, reward: f64, horizon: u64) -> Trajectory {
        Trajectory {
            policy: PolicyKind::NoCd,
            seed: 0,
            steps: (1..=horizon)
                .map(|t| StepRecord {
                    t,
                    action,
                    observed_state: 0,
                    reward,
                    explored: false,
                    alarm: false,
                })
                .collect(),
            alarms: vec![],
            resets: vec![],
        }
    }

    #[test]
    fn worst_arm_slope() {
        let env = fixed_env(&[0.2, 0.8], 100, RewardNoise::None);
        let r = standard_regret(&constant_trajectory(0, 0.2, 100), &env).unwrap();
        assert_eq!(r.len(), 100);
        assert!((r[99] - 60.0).abs() < 1e-9);
        assert!((r[50] - r[49] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch() {
        let env = fixed_env(&[0.2, 0.8], 100, RewardNoise::None);
        assert!(matches!(
            standard_regret(&constant_trajectory(0, 0.2, 99), &env),
            Err(Error::LengthMismatch { left: 99, right: 100 })
        ));
        assert!(excess_regret(&[0.0; 3], &[0.0; 2]).is_err());
    }

    #[test]
    fn excess_examples() {
        let same = vec![0.5; 10];
        assert!(excess_regret(&same, &same).unwrap().iter().all(|&x| x == 0.0));
        let e = excess_regret(&[0.7; 10], &[0.8; 10]).unwrap();
        assert!((e[9] - 1.0).abs() < 1e-12);
        assert!(excess_regret(&[], &[]).unwrap().is_empty());
    }

    #[test]
    fn aggregate_examples() {
        let single = aggregate(&[vec![1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(single.mean, vec![1.0, 2.0, 3.0]);
        assert_eq!(single.se, vec![0.0; 3]);
        let two = aggregate(&[vec![1.0; 4], vec![3.0; 4]]).unwrap();
        assert_eq!(two.mean, vec![2.0; 4]);
        // sample std = sqrt(2), se = sqrt(2)/sqrt(2) = 1
        assert!((two.se[0] - 1.0).abs() < 1e-12);
        assert!(matches!(aggregate::<Vec<f64>>(&[]), Err(Error::EmptyInput)));
        assert!(aggregate(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn neumaier_recovers_cancelled_terms() {
        let mut s = NeumaierSum::default();
        for x in [1.0, 1e100, 1.0, -1e100] {
            s.add(x);
        }
        assert_eq!(s.value(), 2.0);
    }

    proptest! {
        #[test]
        fn excess_is_antisymmetric(
            pairs in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 0..200)
        ) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let ab = excess_regret(&a, &b).unwrap();
            let ba = excess_regret(&b, &a).unwrap();
            for (x, y) in ab.iter().zip(&ba) {
                prop_assert!((x + y).abs() < 1e-9);
            }
        }

        #[test]
        fn aggregate_is_order_independent(
            rows in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 16), 1..30)
        ) {
            let forward = aggregate(&rows).unwrap();
            let mut rev = rows.clone();
            rev.reverse();
            let backward = aggregate(&rev).unwrap();
            for t in 0..16 {
                prop_assert!((forward.mean[t] - backward.mean[t]).abs() < 1e-12);
                prop_assert!((forward.se[t] - backward.se[t]).abs() < 1e-12);
            }
        }
    }
}
