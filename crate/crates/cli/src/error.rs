use thiserror::Error;

use crate::arrayfile::ArrayFileError;

/// Failure classes of the command-line driver, one per exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input: config, flags, files or shapes.
    #[error("{0}")]
    User(String),
    /// A memory budget or partition constraint cannot be met.
    #[error("{0}")]
    Capacity(String),
    /// A result failed an internal sanity check.
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn user(msg: impl Into<String>) -> Self {
        CliError::User(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::User(_) => 2,
            CliError::Capacity(_) => 3,
            CliError::Internal(_) => 4,
        }
    }
}

impl From<hvox::Error> for CliError {
    fn from(e: hvox::Error) -> Self {
        match e {
            hvox::Error::Domain(_) => CliError::User(e.to_string()),
            hvox::Error::Capacity { .. } | hvox::Error::Solver(_) => CliError::Capacity(e.to_string()),
        }
    }
}

impl From<ArrayFileError> for CliError {
    fn from(e: ArrayFileError) -> Self {
        CliError::User(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
