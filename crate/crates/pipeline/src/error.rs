use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),

    #[error("missing prerequisite: {path} not found; run `quanv {stage}` first")]
    Missing { stage: String, path: PathBuf },

    #[error("integrity failure: {0}")]
    Integrity(quanv::Error),

    #[error("workspace {0} is locked by another run (remove the lock file if no run is active)")]
    Locked(PathBuf),

    #[error(transparent)]
    Core(quanv::Error),
}

impl PipelineError {
    pub fn config(msg: impl Into<String>) -> Self {
        PipelineError::Config(msg.into())
    }

    pub fn missing(stage: &str, path: impl Into<PathBuf>) -> Self {
        PipelineError::Missing {
            stage: stage.to_string(),
            path: path.into(),
        }
    }

    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Missing { .. } => 3,
            PipelineError::Integrity(_) => 4,
            PipelineError::Locked(_) | PipelineError::Core(_) => 1,
        }
    }
}

impl From<quanv::Error> for PipelineError {
    fn from(e: quanv::Error) -> Self {
        match e {
            quanv::Error::HashMismatch { .. } => PipelineError::Integrity(e),
            other => PipelineError::Core(other),
        }
    }
}
