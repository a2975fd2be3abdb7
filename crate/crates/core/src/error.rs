use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("location {index} at ({x}, {y}) lies outside the mesh")]
    OutsideMesh { index: usize, x: f64, y: f64 },

    #[error("matrix is not positive definite (pivot {pivot} = {value:e}); {hint}")]
    NotPositiveDefinite {
        pivot: usize,
        value: f64,
        hint: &'static str,
    },

    #[error("CFL number {cfl:.3} exceeds {limit}; use dt <= {suggested_dt:e}")]
    Cfl {
        cfl: f64,
        limit: f64,
        suggested_dt: f64,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("configuration errors:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 for configuration/input errors,
    /// 3 for numerical failures, 4 for I/O failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_) | Error::Config(_) | Error::Parse { .. } => 2,
            Error::OutsideMesh { .. } => 2,
            Error::NotPositiveDefinite { .. } | Error::Cfl { .. } | Error::Numerical(_) => 3,
            Error::Io { .. } => 4,
        }
    }
}
