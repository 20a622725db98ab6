use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("matrix is not symmetric: {0}")]
    Symmetry(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("degenerate vector: {0}")]
    DegenerateVector(String),

    #[error("invalid label: {0}")]
    Label(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{}:{line}: {msg}", path.display())]
    Validation { path: PathBuf, line: usize, msg: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn validation(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Validation { path: path.into(), line, msg: msg.into() }
    }

    /// Process exit code: 2 for anything the input could fix, 3 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Numerical(_) => 3,
            _ => 2,
        }
    }
}
