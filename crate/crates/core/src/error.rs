use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("graph must have at least one node")]
    EmptyGraph,

    #[error("node index {index} out of range 1..={n_nodes}")]
    IndexOutOfRange { index: usize, n_nodes: usize },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerically singular system in {0}")]
    Singular(&'static str),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("power iteration did not converge (best estimate {estimate})")]
    NonConvergence { estimate: f64 },

    #[error("rho = {rho} is smaller than ||S_{index}||_2 = {norm}")]
    RhoTooSmall { rho: f64, norm: f64, index: usize },

    #[error("feature history unavailable at iteration {iteration} without pretraining")]
    MissingHistory { iteration: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn dims(
        context: &'static str,
        expected: impl std::fmt::Display,
        found: impl std::fmt::Display,
    ) -> Self {
        Error::DimensionMismatch {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than numerical failure.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::EmptyGraph
                | Error::IndexOutOfRange { .. }
                | Error::DimensionMismatch { .. }
                | Error::InvalidInput(_)
                | Error::RhoTooSmall { .. }
                | Error::Io { .. }
                | Error::Parse { .. }
                | Error::Json { .. }
        )
    }
}
