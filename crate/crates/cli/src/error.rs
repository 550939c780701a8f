use std::fmt;
use std::process::ExitCode;

use werate_core::Error;

#[derive(Debug)]
pub enum CliError {
    /// Config does not match its schema or fails model validation.
    Schema(String),
    /// A numerical routine failed or a precondition does not hold.
    Numeric(String),
    /// The request exceeds a size guard.
    Size(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Schema(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Size(_) => 4,
            CliError::Io(_) => 1,
        })
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Schema(m) => write!(f, "config error: {m}"),
            CliError::Numeric(m) => write!(f, "numerical failure: {m}"),
            CliError::Size(m) => write!(f, "size guard: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::InvalidInput(_) | Error::InvalidDistribution { .. } | Error::NegativeWeight { .. } => {
                CliError::Schema(msg)
            }
            Error::SizeGuard { .. } => CliError::Size(msg),
            _ => CliError::Numeric(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
