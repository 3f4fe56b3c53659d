use std::process::ExitCode;

use slide_core::SlideError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration, flags, checkpoint, or input schema.
    #[error("{0}")]
    Usage(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("{0}")]
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) => ExitCode::from(2),
            CliError::Io(_) => ExitCode::from(3),
            CliError::Run(_) => ExitCode::from(1),
        }
    }
}

impl From<SlideError> for CliError {
    fn from(e: SlideError) -> Self {
        let message = e.to_string();
        match e.root() {
            SlideError::Config { .. } | SlideError::Checkpoint(_) | SlideError::Structural { .. } => CliError::Usage(message),
            SlideError::Io(_) => CliError::Io(message),
            _ => CliError::Run(message),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
