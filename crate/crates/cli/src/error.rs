use std::path::{Path, PathBuf};

use radplace_core::Error as CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("config: {0}")]
    Config(String),

    /// Nothing to do, or a result with no content.
    #[error("{0}")]
    Empty(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    /// Process exit status: 1 usage, 2 empty or degenerate, 3 bad data,
    /// 4 broken internal invariant.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Empty(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Internal(_) => 4,
            CliError::Core(e) => match e.root() {
                CoreError::InvalidConfig(_) => 1,
                CoreError::EmptyDatabase
                | CoreError::NoTriplets { .. }
                | CoreError::NoRotation
                | CoreError::UndefinedRecall(_)
                | CoreError::MissingGroundTruth => 2,
                CoreError::InvalidSegment(_) => 4,
                _ => 3,
            },
        }
    }
}
