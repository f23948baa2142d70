use std::path::Path;

use thiserror::Error;

/// Failure classes; each maps to one process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{0}")]
    Io(String),

    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io(format!("i/o error on {}: {e}", path.display()))
    }
}

impl From<c2fdiff::Error> for CliError {
    fn from(e: c2fdiff::Error) -> Self {
        use c2fdiff::Error as E;
        if e.is_io() {
            return CliError::Io(e.to_string());
        }
        match e {
            E::InvalidArgument { .. } => CliError::Config(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
