//! Window-based mean-shift detection (the M-UCB test).
//!
//! For the `w` most recent rewards `Z_1..Z_w` of an arm, an alarm is raised
//! when
//!
//! ```text
//! | sum_{l = w/2+1}^{w} Z_l - sum_{l=1}^{w/2} Z_l | > b
//! ```
//!
//! All logarithms in the parameter calculators are natural logarithms.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Window size and threshold of the two-half test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    window: usize,
    threshold: f64,
}

impl DetectorConfig {
    pub fn new(window: usize, threshold: f64) -> Result<Self> {
        if window < 2 || window % 2 != 0 {
            return Err(Error::BadWindow(format!("window {window} must be even and >= 2")));
        }
        if !(threshold > 0.0 && threshold.is_finite()) {
            return Err(Error::BadWindow(format!("threshold {threshold} must be positive")));
        }
        Ok(Self { window, threshold })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }
}

/// The two-half test on exactly `w` samples.
pub fn cd_test(window: usize, threshold: f64, samples: &[f64]) -> Result<bool> {
    if window % 2 != 0 || window == 0 {
        return Err(Error::BadWindow(format!("window {window} must be even and positive")));
    }
    if samples.len() != window {
        return Err(Error::BadWindow(format!(
            "expected {window} samples, got {}",
            samples.len()
        )));
    }
    let (head, tail) = samples.split_at(window / 2);
    let diff = tail.iter().sum::<f64>() - head.iter().sum::<f64>();
    Ok(diff.abs() > threshold)
}

/// Smallest even integer >= `x`, and at least 2.
fn even_ceil(x: f64) -> usize {
    let c = x.ceil().max(2.0) as usize;
    c + (c % 2)
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::BadDelta(delta));
    }
    Ok(())
}

fn check_mixing(l: f64) -> Result<()> {
    if !(l > 0.0 && l.is_finite()) {
        return Err(Error::BadMixingTime(l));
    }
    Ok(())
}

fn log_terms(num_arms: usize, horizon: u64) -> (f64, f64) {
    let k = num_arms as f64;
    let t = horizon as f64;
    ((2.0 * k * t * t).ln(), (2.0 * t).ln())
}

/// Raw (unrounded) window for i.i.d. rewards:
/// `(4/delta^2) (sqrt(ln 2KT^2) + sqrt(ln 2T))^2`.
pub fn window_one_state(delta: f64, num_arms: usize, horizon: u64) -> Result<f64> {
    check_delta(delta)?;
    let (lk, lt) = log_terms(num_arms, horizon);
    Ok(4.0 / (delta * delta) * (lk.sqrt() + lt.sqrt()).powi(2))
}

/// `b = sqrt((w/2) ln 2KT^2)`.
pub fn threshold_one_state(window: usize, num_arms: usize, horizon: u64) -> f64 {
    let (lk, _) = log_terms(num_arms, horizon);
    (window as f64 / 2.0 * lk).sqrt()
}

/// Parameters for one-state (i.i.d. reward) arms.
pub fn params_one_state(delta: f64, num_arms: usize, horizon: u64) -> Result<DetectorConfig> {
    let window = even_ceil(window_one_state(delta, num_arms, horizon)?);
    DetectorConfig::new(window, threshold_one_state(window, num_arms, horizon))
}

/// Raw mixing-time-aware window:
/// `(4/delta^2) (sqrt(2 ln 2KT^2) + sqrt(144 L ln 2KT^2) + sqrt(144 L ln 2T))^2`.
pub fn window_general(delta_min: f64, num_arms: usize, horizon: u64, mixing: f64) -> Result<f64> {
    check_delta(delta_min)?;
    check_mixing(mixing)?;
    let (lk, lt) = log_terms(num_arms, horizon);
    let s = (2.0 * lk).sqrt() + (144.0 * mixing * lk).sqrt() + (144.0 * mixing * lt).sqrt();
    Ok(4.0 / (delta_min * delta_min) * s * s)
}

/// `b = sqrt((w/2) ln 2KT^2) + sqrt(144 w L ln 2KT^2)`.
pub fn threshold_general(window: usize, num_arms: usize, horizon: u64, mixing: f64) -> f64 {
    let (lk, _) = log_terms(num_arms, horizon);
    let w = window as f64;
    (w / 2.0 * lk).sqrt() + (144.0 * w * mixing * lk).sqrt()
}

/// Parameters for Markov arms with maximum mixing time `mixing`.
pub fn params_general(
    delta_min: f64,
    num_arms: usize,
    horizon: u64,
    mixing: f64,
) -> Result<DetectorConfig> {
    let window = even_ceil(window_general(delta_min, num_arms, horizon, mixing)?);
    DetectorConfig::new(window, threshold_general(window, num_arms, horizon, mixing))
}

/// The hand-tuned setting `w = floor(100 sqrt(144 L))` (rounded up to even)
/// paired with the mixing-time-aware threshold.
pub fn params_empirical(num_arms: usize, horizon: u64, mixing: f64) -> Result<DetectorConfig> {
    check_mixing(mixing)?;
    let window = even_ceil((100.0 * (144.0 * mixing).sqrt()).floor());
    DetectorConfig::new(window, threshold_general(window, num_arms, horizon, mixing))
}

/// Delay allowance after a change ending a segment of length `segment_len`:
/// `ceil(w (K/(2 alpha) + 1) sqrt(s + 1) + (w^2/4) (K/(2 alpha) + 1)^2)`.
pub fn delay_threshold(window: usize, num_arms: usize, alpha: f64, segment_len: u64) -> u64 {
    let w = window as f64;
    let c = num_arms as f64 / (2.0 * alpha) + 1.0;
    (w * c * ((segment_len + 1) as f64).sqrt() + w * w / 4.0 * c * c).ceil() as u64
}

/// Which arms are tested after a pull.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestCadence {
    /// Only the arm that just received a sample.
    #[default]
    PulledArm,
    /// Every arm holding a full window.
    AllArms,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct ArmWindow {
    buf: VecDeque<f64>,
    count: u64,
    head_sum: f64,
    tail_sum: f64,
    since_resum: usize,
}

impl ArmWindow {
    fn push(&mut self, r: f64, window: usize) {
        let half = window / 2;
        self.count += 1;
        if self.buf.len() == window {
            let old = self.buf.pop_front().expect("full window");
            self.head_sum -= old;
            let moved = self.buf[half - 1];
            self.head_sum += moved;
            self.tail_sum -= moved;
            self.buf.push_back(r);
            self.tail_sum += r;
        } else {
            if self.buf.len() < half {
                self.head_sum += r;
            } else {
                self.tail_sum += r;
            }
            self.buf.push_back(r);
        }
        self.since_resum += 1;
        if self.since_resum >= window {
            self.resum(half);
        }
    }

    fn resum(&mut self, half: usize) {
        let split = half.min(self.buf.len());
        self.head_sum = self.buf.range(..split).sum();
        self.tail_sum = self.buf.range(split..).sum();
        self.since_resum = 0;
    }

    fn test(&mut self, cfg: &DetectorConfig) -> bool {
        if self.buf.len() < cfg.window {
            return false;
        }
        let gap = (self.tail_sum - self.head_sum).abs() - cfg.threshold;
        // Running sums may drift by rounding; settle near-ties on the exact
        // window contents.
        if gap.abs() <= 1e-9 * cfg.window as f64 {
            let w = cfg.window;
            return cd_test(w, cfg.threshold, self.buf.make_contiguous())
                .expect("buffer holds exactly w samples");
        }
        gap > 0.0
    }
}

/// Per-arm windows of recent rewards feeding the two-half test.
#[derive(Debug, Clone, PartialEq)]
pub struct MucbDetector {
    config: DetectorConfig,
    cadence: TestCadence,
    arms: Vec<ArmWindow>,
}

impl MucbDetector {
    pub fn new(config: DetectorConfig, num_arms: usize) -> Self {
        Self::with_cadence(config, num_arms, TestCadence::PulledArm)
    }

    pub fn with_cadence(config: DetectorConfig, num_arms: usize, cadence: TestCadence) -> Self {
        Self {
            config,
            cadence,
            arms: vec![ArmWindow::default(); num_arms],
        }
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    /// Samples of `arm` since the last reset.
    pub fn count(&self, arm: usize) -> u64 {
        self.arms[arm].count
    }

    /// The `min(n_k, w)` most recent rewards of `arm`, oldest first.
    pub fn window_of(&self, arm: usize) -> impl Iterator<Item = f64> + '_ {
        self.arms[arm].buf.iter().copied()
    }

    /// Records reward `r` for `arm` and runs the test. With fewer than `w`
    /// samples on a tested arm the answer is always `false`.
    pub fn observe(&mut self, arm: usize, r: f64) -> bool {
        let cfg = self.config;
        self.arms[arm].push(r, cfg.window);
        match self.cadence {
            TestCadence::PulledArm => self.arms[arm].test(&cfg),
            TestCadence::AllArms => self
                .arms
                .iter_mut()
                .fold(false, |alarm, a| a.test(&cfg) || alarm),
        }
    }

    /// Empties every window.
    pub fn reset(&mut self) {
        self.arms.iter_mut().for_each(|a| *a = ArmWindow::default());
    }
}
