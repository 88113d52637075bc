//! Experiment harness: presets, experiment specs, and the trial runner.

pub mod config;
pub mod presets;
pub mod runner;

pub use config::{validate_config, validate_spec, ExperimentSpec, ValidatedExperiment};
pub use presets::build_preset;
pub use runner::{run_experiment, run_in_memory, ExperimentResult};
