//! Batch driver for coordination experiments: configuration, the
//! `train` → `coordinate` → `evaluate` → `diagnose` pipeline, and reports.

pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;

pub use config::{ExperimentConfig, StageSeeds};
pub use error::CliError;
pub use manifest::{Clock, RunLayout, RunManifest};
pub use pipeline::{cmd_coordinate, cmd_diagnose, cmd_evaluate, cmd_report, cmd_train, run_all, Method};
