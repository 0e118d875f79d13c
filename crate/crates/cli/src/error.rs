use thiserror::Error;

use haloscope::Error as CoreError;
use haloscope_wire::WireError;

/// Failures mapped onto the exit-code contract.
#[derive(Debug, Error)]
pub enum CliError {
    /// Exit 1: the pipeline ran but an acceptance criterion failed.
    #[error("criterion failed: {0}")]
    Criterion(String),
    /// Exit 2: bad flags or configuration.
    #[error("usage error: {0}")]
    Usage(String),
    /// Exit 3: missing, corrupt or inconsistent data.
    #[error("data integrity error: {0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Criterion(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidConfig(_)
            | CoreError::Nyquist { .. }
            | CoreError::Domain(_)
            | CoreError::DuplicateSensor { .. }
            | CoreError::InsufficientTrials(_)
            | CoreError::EmptySubset(_) => CliError::Usage(e.to_string()),
            CoreError::TooShort { .. } | CoreError::Misaligned(_) | CoreError::Fit(_) => {
                CliError::Data(e.to_string())
            }
        }
    }
}

impl From<WireError> for CliError {
    fn from(e: WireError) -> Self {
        match e {
            WireError::InvalidField(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
