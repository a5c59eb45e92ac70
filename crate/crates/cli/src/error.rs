use thiserror::Error;

/// Command failure, split by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config or artifact combinations; exit 2.
    #[error("{0}")]
    Usage(String),
    /// Anything that went wrong while running; exit 1.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<cnf_core::Error> for CliError {
    fn from(e: cnf_core::Error) -> Self {
        match e {
            cnf_core::Error::Config(m) => CliError::Usage(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
