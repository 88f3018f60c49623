use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl HarnessError {
    /// Process exit status for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Data(_) => 3,
            HarnessError::Divergence(_) => 4,
            HarnessError::Io { .. } => 1,
        }
    }

    pub fn io(path: &Path, source: io::Error) -> Self {
        HarnessError::Io { path: path.to_path_buf(), source }
    }
}

impl From<dialrec_core::Error> for HarnessError {
    fn from(e: dialrec_core::Error) -> Self {
        match e {
            dialrec_core::Error::Config(_) => HarnessError::Config(e.to_string()),
            dialrec_core::Error::Divergence { .. } => HarnessError::Divergence(e.to_string()),
            _ => HarnessError::Data(e.to_string()),
        }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
