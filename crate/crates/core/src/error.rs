use std::fmt;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("chain is not ergodic: {0}")]
    NotErgodic(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid transition matrix: {0}")]
    InvalidTransition(String),
    #[error("invalid environment: {0}")]
    InvalidEnvironment(String),
    #[error("step at t={t} exceeds horizon {horizon}")]
    HorizonExceeded { t: u64, horizon: u64 },
    #[error("arm index {arm} out of range for {num_arms} arms")]
    InvalidArm { arm: usize, num_arms: usize },
    #[error("bad detector window: {0}")]
    BadWindow(String),
    #[error("mean-shift lower bound must lie in (0, 1], got {0}")]
    BadDelta(f64),
    #[error("mixing time must be positive and finite, got {0}")]
    BadMixingTime(f64),
    #[error("reward {0} outside [0, 1]")]
    RewardOutOfRange(f64),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("invalid configuration:\n{}", Diagnostics(.0))]
    Validation(Vec<Diagnostic>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// A validation finding tied to a location in a configuration document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub path: String,
    pub message: String,
}

impl Diagnostic {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

struct Diagnostics<'a>(&'a [Diagnostic]);

impl fmt::Display for Diagnostics<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "  {d}")?;
        }
        Ok(())
    }
}
