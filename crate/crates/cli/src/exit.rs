use std::fmt;

use w2lab_core::Error;

pub const CONFIG: u8 = 2;
pub const DIVERGED: u8 = 3;
pub const VIOLATION: u8 = 4;
const OTHER: u8 = 1;

/// A failed subcommand together with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Failure {
            code: CONFIG,
            message: message.into(),
        }
    }

    pub fn violation(message: impl Into<String>) -> Self {
        Failure {
            code: VIOLATION,
            message: message.into(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::InvalidArgument(_) => CONFIG,
            Error::Divergence { .. } | Error::NonFiniteState { .. } | Error::NonFinite(_) => DIVERGED,
            _ => OTHER,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure {
            code: OTHER,
            message: e.to_string(),
        }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure {
            code: OTHER,
            message: e.to_string(),
        }
    }
}
