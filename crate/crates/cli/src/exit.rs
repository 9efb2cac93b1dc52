//! Exit-code contract: 0 ok, 1 config, 2 numeric or data, 3 assertion violated.

use std::fmt;

use tailtilt_core::Error;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numeric(String),
    Violation(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numeric(_) => 2,
            CliError::Violation(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
            CliError::Violation(m) => write!(f, "check failed: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

/// Argument errors from the core surface as config errors; everything else
/// (degenerate weights, corrupted files, I/O) is class 2.
impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_) => CliError::Config(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Numeric(e.to_string())
    }
}
