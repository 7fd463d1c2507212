//! Configuration, Monte Carlo experiments and persisted run records.

pub mod config;
pub mod experiments;
pub mod record;

pub use config::{Experiment, ExperimentConfig};
pub use experiments::{output_dir, run_experiment, Runner};
pub use record::{RunRecord, Status};
