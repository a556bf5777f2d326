//! Experiment harness for synthphys: dataset generation, training,
//! evaluation, sweeps and reports, driven by a JSON config.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod plot;
pub mod report;
pub mod sweep;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
