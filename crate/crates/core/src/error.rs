use thiserror::Error;

use crate::dynamics::{EvalError, ExprError};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Expr(#[from] ExprError),

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("missing parameter `{0}`")]
    MissingParameter(String),

    #[error("not oscillatory: {0}")]
    NotOscillatory(String),

    #[error("state became non-finite after t = {last_finite_time}")]
    BlowUp { last_finite_time: f64 },

    #[error("no convergence: {0}")]
    NonConvergence(String),

    #[error("trajectory left the basin bounding box at {location}")]
    BasinEscape { location: String },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("not certifiable: {0}")]
    NonCertifiable(String),

    #[error("weights are not symmetric at ({0}, {1})")]
    AsymmetricWeights(usize, usize),

    #[error("matrix is not symmetric")]
    NonSymmetric,

    #[error("{0}")]
    Internal(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl From<EvalError> for Error {
    fn from(e: EvalError) -> Self {
        Error::Expr(ExprError::Eval(e))
    }
}

impl Error {
    /// True for failures of the numerics rather than of the user's input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Expr(e) => e.is_eval(),
            Error::NotOscillatory(_)
            | Error::BlowUp { .. }
            | Error::NonConvergence(_)
            | Error::BasinEscape { .. }
            | Error::Internal(_) => true,
            _ => false,
        }
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
