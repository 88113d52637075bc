//! Piecewise-stationary restless bandits: Markov-arm environments, diminishing
//! forced exploration, sliding-window change detection, base solvers, and an
//! experiment harness comparing the combined policy against oracles.

pub mod detect;
pub mod env;
pub mod error;
pub mod explore;
pub mod harness;
pub mod orchestrate;
pub mod regret;
pub mod solvers;

pub use error::{Diagnostic, Error, Result};
