use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, TgpError>;

#[derive(Debug, Error)]
pub enum TgpError {
    #[error("parameter out of domain: {0}")]
    ParamDomain(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    /// Cholesky factorization hit a non-positive pivot; usually the nugget is too small.
    #[error("ill-conditioned matrix: pivot {pivot:e} at index {index}")]
    IllConditioned { pivot: f64, index: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("invalid tree structure: {0}")]
    Structural(String),

    #[error("{path}: row {row}, column {column}: {message}")]
    Data {
        path: PathBuf,
        row: usize,
        column: String,
        message: String,
    },

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("no posterior samples available")]
    EmptySamples,

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl TgpError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TgpError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end: 1 for validation
    /// problems, 2 for numeric aborts.
    pub fn exit_code(&self) -> i32 {
        match self {
            TgpError::IllConditioned { .. } | TgpError::Numeric(_) => 2,
            _ => 1,
        }
    }
}
