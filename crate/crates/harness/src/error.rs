use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    /// Malformed or inconsistent experiment configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error("cannot read config {path}: {source}")]
    ConfigIo { path: PathBuf, source: std::io::Error },

    /// A pipeline stage failed; `context` names the method and config hash.
    #[error("stage `{stage}` failed ({context}): {source}")]
    Stage {
        stage: &'static str,
        context: String,
        #[source]
        source: normalcs_core::Error,
    },

    #[error("stage `output` failed writing {path}: {message}")]
    Output { path: PathBuf, message: String },
}

impl HarnessError {
    /// Process exit code: 2 for configuration problems, 3 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::ConfigIo { .. } => 2,
            HarnessError::Stage { .. } | HarnessError::Output { .. } => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
