use std::process::ExitCode;

use thiserror::Error;

/// Failures grouped by the exit code they map to.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Config(String),
    #[error("evaluation set is empty: no predictions and no ground truth")]
    EmptySet,
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Input(_) => ExitCode::from(1),
            CliError::Config(_) => ExitCode::from(2),
            CliError::EmptySet => ExitCode::from(3),
        }
    }
}

impl From<detcal_core::Error> for CliError {
    fn from(e: detcal_core::Error) -> Self {
        use detcal_core::Error as E;
        match e {
            E::InvalidConfig(_) => CliError::Config(e.to_string()),
            E::EmptyEvaluationSet => CliError::EmptySet,
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
