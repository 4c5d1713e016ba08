use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] cvharness_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("missing upstream artifact `{0}`; run the earlier stage first")]
    MissingArtifact(PathBuf),
    #[error("{path} was produced by config {found}, expected {expected}")]
    HashMismatch { path: PathBuf, expected: String, found: String },
    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: String, message: String },
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

impl HarnessError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        HarnessError::Io { path: path.to_path_buf(), source }
    }

    pub fn json(path: &Path, source: serde_json::Error) -> Self {
        HarnessError::Json { path: path.to_path_buf(), source }
    }

    pub fn format(path: &Path, message: impl Into<String>) -> Self {
        HarnessError::Format { path: path.to_path_buf(), message: message.into() }
    }

    /// 1 for problems with inputs (config, artifacts, files), 2 for
    /// failures while running an experiment.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Core(cvharness_core::Error::InvalidArgument(_)) => 1,
            HarnessError::Core(_) | HarnessError::Stage { .. } => 2,
            HarnessError::Io { .. } => 2,
            _ => 1,
        }
    }
}
