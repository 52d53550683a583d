use std::fmt;

use mcfa_core::Error;

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_TRAINING: u8 = 3;

/// A message plus the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: String) -> Self {
        CliError {
            code: EXIT_USAGE,
            message,
        }
    }

    pub fn data(message: String) -> Self {
        CliError {
            code: EXIT_DATA,
            message,
        }
    }

    /// A library error raised while validating configuration values.
    pub fn from_config(e: Error) -> Self {
        CliError::config(e.to_string())
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) => EXIT_USAGE,
            Error::TrainingAborted(_) | Error::NonFinite(_) => EXIT_TRAINING,
            _ => EXIT_DATA,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}
