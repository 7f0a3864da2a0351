use thiserror::Error;

/// Failure of a CLI command, carrying its stable exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags or config (exit 1).
    #[error("{0}")]
    Usage(String),
    /// Simulation, I/O or input-file failure (exit 2).
    #[error("{0}")]
    Runtime(String),
    /// Collapse test completed with a negative verdict (exit 3).
    #[error("{0}")]
    NotCollapsed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::NotCollapsed(_) => 3,
        }
    }
}

impl From<qpkr::Error> for CliError {
    fn from(e: qpkr::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}
