//! Forced-exploration schedules.
//!
//! [`ExplorationSchedule`] is the diminishing scheme: after a reset at time
//! `tau`, block `j` pulls arms `0..K` at local times `u_j, ..., u_j + K - 1`
//! where
//!
//! ```text
//! u_1 = ceil((alpha - K / (4 alpha))^2)           (clamped to >= 1)
//! u_j = ceil(u + (K / alpha) sqrt(u) + K^2 / (4 alpha^2)),  u = u_{j-1}
//! ```
//!
//! so the gap between blocks grows like `sqrt(u)`. [`UniformSchedule`] is the
//! constant-rate comparison scheme.

/// Cursor of the diminishing exploration scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplorationSchedule {
    alpha: f64,
    num_arms: usize,
    cursor: u64,
    segment_start: u64,
}

/// `ceil((alpha - K/(4 alpha))^2)`, unclamped.
pub fn initial_cursor(alpha: f64, num_arms: usize) -> u64 {
    let k = num_arms as f64;
    let x = alpha - k / (4.0 * alpha);
    // Float-to-int casts saturate, so alpha = inf maps to u64::MAX.
    (x * x).ceil() as u64
}

/// `ceil(u + (K/alpha) sqrt(u) + K^2/(4 alpha^2))`.
pub fn advance_cursor(u: u64, alpha: f64, num_arms: usize) -> u64 {
    let k = num_arms as f64;
    let uf = u as f64;
    (uf + k / alpha * uf.sqrt() + k * k / (4.0 * alpha * alpha)).ceil() as u64
}

impl ExplorationSchedule {
    /// Schedule starting at `tau = 0`. `alpha = f64::INFINITY` disables exploration.
    pub fn new(alpha: f64, num_arms: usize) -> Self {
        assert!(alpha > 0.0, "alpha must be positive");
        assert!(num_arms >= 1, "need at least one arm");
        Self {
            alpha,
            num_arms,
            cursor: initial_cursor(alpha, num_arms).max(1),
            segment_start: 0,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn num_arms(&self) -> usize {
        self.num_arms
    }

    /// Local start `u` of the current (or next) exploration block.
    pub fn cursor(&self) -> u64 {
        self.cursor
    }

    pub fn segment_start(&self) -> u64 {
        self.segment_start
    }

    /// Exploration decision for global time `t > tau`. Returns the 0-based arm
    /// to pull inside a block. One step past a block's end the cursor moves to
    /// the next block and `None` is returned.
    pub fn exploration_action(&mut self, t: u64) -> Option<usize> {
        debug_assert!(t > self.segment_start);
        let local = t - self.segment_start;
        let u = self.cursor;
        let end = u.saturating_add(self.num_arms as u64);
        if u <= local && local < end {
            // 1-based arm (local - u + 1) in the block maps to index local - u.
            return Some((local - u) as usize);
        }
        if local == end {
            self.cursor = advance_cursor(u, self.alpha, self.num_arms);
        }
        None
    }

    /// Restart the schedule at time `t`.
    pub fn reset(&mut self, t: u64) {
        self.segment_start = t;
        self.cursor = initial_cursor(self.alpha, self.num_arms).max(1);
    }

    /// Local block starts `u_1, u_2, ...` not exceeding `limit`.
    pub fn block_starts(alpha: f64, num_arms: usize, limit: u64) -> Vec<u64> {
        let mut starts = Vec::new();
        let mut u = initial_cursor(alpha, num_arms).max(1);
        while u <= limit {
            starts.push(u);
            let next = advance_cursor(u, alpha, num_arms);
            if next <= u {
                break;
            }
            u = next;
        }
        starts
    }
}

/// Constant-rate exploration: the first `K` local steps of every period of
/// `max(K, floor(K / gamma))` steps cycle through the arms, so each arm is
/// explored at rate `gamma / K`.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformSchedule {
    num_arms: usize,
    period: u64,
    segment_start: u64,
}

impl UniformSchedule {
    pub fn new(gamma: f64, num_arms: usize) -> Self {
        assert!(gamma > 0.0, "exploration rate must be positive");
        let k = num_arms as u64;
        let period = ((num_arms as f64 / gamma).floor() as u64).max(k);
        Self {
            num_arms,
            period,
            segment_start: 0,
        }
    }

    /// Rate `gamma = sqrt((M/T) ln(T/M))` used for the uniform comparison.
    pub fn default_rate(num_segments: usize, horizon: u64) -> f64 {
        let m = num_segments as f64;
        let t = horizon as f64;
        ((m / t) * (t / m).ln()).sqrt()
    }

    pub fn period(&self) -> u64 {
        self.period
    }

    pub fn exploration_action(&mut self, t: u64) -> Option<usize> {
        let pos = (t - self.segment_start - 1) % self.period;
        (pos < self.num_arms as u64).then_some(pos as usize)
    }

    pub fn reset(&mut self, t: u64) {
        self.segment_start = t;
    }
}
