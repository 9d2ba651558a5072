//! Experiment runner: JSON configs in, deterministic tables and a manifest out.

pub mod config;
pub mod run;

pub use config::{ConfigError, ExperimentConfig, ExperimentKind, LawConfig, Validated};
pub use run::{execute, run, write_outputs, Outcome, RunManifest, RunStatus};
