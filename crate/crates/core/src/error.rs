use std::path::PathBuf;

use thiserror::Error;

use crate::trainer::HistoryRow;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A numeric or structural parameter is outside its domain.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("column `{column}`: {message}")]
    Column { column: String, message: String },

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("noise calibration failed: {0}")]
    Calibration(String),

    #[error("training diverged at step {step}: loss {loss}")]
    Diverged {
        step: usize,
        loss: f64,
        history: Box<Vec<HistoryRow>>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}
