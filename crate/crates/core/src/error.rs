use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the simulator and its solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: String,
        actual: String,
    },

    /// The centralized allocation program has no feasible point. `time` and
    /// `link` name the first (time, link) pair whose capacity cannot absorb the
    /// requests that the tolerance windows force onto it.
    #[error("allocation infeasible at time {time}, link {link}: {detail}")]
    AllocationInfeasible {
        time: usize,
        link: usize,
        detail: String,
    },

    #[error("solver hit its time limit without a feasible point ({vars} binaries)")]
    SolverNoIncumbent { vars: usize },

    #[error("problem has {vars} variables, enumeration is limited to {limit}")]
    TooLargeToEnumerate { vars: usize, limit: usize },

    #[error("internal consistency error: {0}")]
    Internal(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn internal(msg: impl Into<String>) -> Self {
        Error::Internal(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
