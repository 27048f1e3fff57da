use thiserror::Error;

use crate::model::Regime;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration document violated a system invariant. `path` points
    /// into the document (e.g. `task 3 step 2`).
    #[error("invalid config at {path}: {msg}")]
    Config { path: String, msg: String },

    #[error("instance too large for exact enumeration: {0}")]
    Intractable(String),

    #[error("policy requires regime {required}: `{policy}` cannot run on {actual}")]
    UnsupportedRegime {
        policy: String,
        required: String,
        actual: Regime,
    },

    #[error("infeasible allocation: {0}")]
    InfeasibleAllocation(String),

    #[error("no completed tasks")]
    NoCompletions,

    #[error("trace line {line}: {msg}")]
    Trace { line: u64, msg: String },

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
