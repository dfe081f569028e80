use std::path::PathBuf;

use thiserror::Error;

use crate::data::Method;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// The design (or a subset of it) does not have full column rank.
    #[error("singular design: rank {rank} of {cols} columns")]
    SingularDesign { rank: usize, cols: usize },

    #[error("{method} estimation failed: {reason}")]
    EstimationFailure { method: Method, reason: String },

    #[error("numeric solver did not converge: {0}")]
    NumericSolver(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("overlapping index is undefined without contaminating rows")]
    UndefinedIndex,

    #[error("power is undefined without contaminating rows")]
    UndefinedPower,

    #[error("metrics table has no cell for lambda = {lambda}, method = {method}")]
    IncompleteTable { lambda: f64, method: Method },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn failure(method: Method, reason: impl Into<String>) -> Self {
        Error::EstimationFailure {
            method,
            reason: reason.into(),
        }
    }
}
