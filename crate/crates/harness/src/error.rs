use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Core(#[from] cael_core::Error),
}

impl HarnessError {
    /// Process exit code: 1 config, 2 data, 3 verification.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            HarnessError::Data(_) | HarnessError::Io { .. } => 2,
            HarnessError::Verification(_) => 3,
            HarnessError::Core(cael_core::Error::InvalidArgument(_)) => 1,
            HarnessError::Core(_) => 2,
        }
    }
}

/// Wraps an IO error with the path it concerns.
pub fn io_error(path: impl Into<PathBuf>, source: io::Error) -> HarnessError {
    HarnessError::Io { path: path.into(), source }
}
