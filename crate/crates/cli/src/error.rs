use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Parse(String),
    #[error("{0}")]
    Divergence(String),
    #[error("I/O error: {0}")]
    Io(String),
    /// A check ran to completion and did not pass.
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::Io(format!("{}: {err}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Parse(_) => 2,
            CliError::Divergence(_) => 3,
            CliError::Io(_) => 4,
            CliError::Failed(_) => 1,
        }
    }
}

impl From<boxrefine::Error> for CliError {
    fn from(e: boxrefine::Error) -> Self {
        match e {
            boxrefine::Error::Divergence { .. } => CliError::Divergence(e.to_string()),
            boxrefine::Error::Configuration(_) => CliError::Config(e.to_string()),
            other => CliError::Parse(other.to_string()),
        }
    }
}
