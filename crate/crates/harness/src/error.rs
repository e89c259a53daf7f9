use thiserror::Error;
use twofluid_core::besov::BesovError;
use twofluid_core::closure::ClosureError;
use twofluid_core::dynamics::DynamicsError;
use twofluid_core::grid::GridError;
use twofluid_core::spectral::SpectralError;

use crate::checkpoint::CheckpointError;
use crate::fit::FitError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Closure(#[from] ClosureError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Besov(#[from] BesovError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("only {found} snapshots inside the fit window [{t0}, {t1}], need {needed}")]
    WindowTooShort { found: usize, needed: usize, t0: f64, t1: f64 },
    #[error("report: {0}")]
    Report(String),
}

pub type Result<T> = std::result::Result<T, HarnessError>;
