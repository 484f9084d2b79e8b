//! CLI error classification; each class maps to a fixed exit code.

use std::fmt;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, bad config keys, unparsable values. Exit 1.
    Usage(String),
    /// File system or format problems. Exit 2.
    Io(String),
    /// Step-size certification refused the run. Exit 3.
    Certification(String),
    /// The solver hit non-finite iterates. Exit 4.
    Divergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Io(_) => 2,
            CliError::Certification(_) => 3,
            CliError::Divergence(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Io(m) => write!(f, "io error: {m}"),
            CliError::Certification(m) => write!(f, "step certification failed: {m}"),
            CliError::Divergence(m) => write!(f, "solver diverged: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

pub fn io_err(context: &str, e: std::io::Error) -> CliError {
    CliError::Io(format!("{context}: {e}"))
}
