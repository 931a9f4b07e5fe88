//! CLI error taxonomy, mapped onto process exit codes.

use std::process::ExitCode;

/// Anything that can abort a command. The variant picks the exit code:
/// config problems exit 2, data problems 3, numerical failures 4.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error("data: {0}")]
    Data(String),

    #[error("numerical: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Config(_) => ExitCode::from(2),
            CliError::Data(_) => ExitCode::from(3),
            CliError::Numerical(_) => ExitCode::from(4),
        }
    }
}

impl From<reshape_core::Error> for CliError {
    fn from(e: reshape_core::Error) -> Self {
        use reshape_core::Error as E;
        match e {
            E::Diverged { .. } | E::SingularRegression(_) => CliError::Numerical(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
