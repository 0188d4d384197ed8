use std::path::PathBuf;
use thiserror::Error;

use crate::sparse::SolverError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("point {point:?} lies outside the domain box")]
    OutOfDomain { point: Vec<f64> },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate cell {cell}: simplex volume {volume:e}")]
    SingularGeometry { cell: usize, volume: f64 },

    #[error("inconsistent periodic pairing: {0}")]
    PeriodicPairing(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error(transparent)]
    Solver(#[from] SolverError<f64>),

    #[error("Newton iteration did not converge after {iterations} iterations (residual history {history:?})")]
    NewtonNotConverged { iterations: usize, history: Vec<f64> },

    #[error("time step failed at t = {t}: {source}")]
    StepFailed {
        t: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("ground-truth cache corrupted at {path}: {reason}")]
    CacheCorrupt { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
