//! Experiment orchestration for `snn-dep`: run configuration, homogeneous and
//! heterogeneous (poisoned) training, evaluation, sweeps and metrics files.

pub mod config;
pub mod metrics;
pub mod run;
pub mod sweep;

pub use config::ExperimentConfig;
pub use run::{evaluate, train_hetero, train_homogeneous, Accuracy, RunOutcome};
