//! Experiment orchestration for the two-fluid laboratory: configuration,
//! rate fitting, reports, checkpoints and the measurement campaigns.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod experiments;
pub mod fit;
pub mod report;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
pub use report::ExperimentReport;
