//! Command implementations behind the `pdforge` binary.

pub mod commands;
pub mod config;
pub mod report;
pub mod run;

use std::fmt;

use pdforge_core::Error;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const INTERNAL: i32 = 1;
    pub const VALIDATION: i32 = 2;
    pub const INFEASIBLE: i32 = 3;
    pub const CONVERGENCE: i32 = 4;
}

/// A command failure with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

pub type Outcome<T> = std::result::Result<T, Failure>;

impl Failure {
    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            code: exit::VALIDATION,
            message: message.into(),
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self {
            code: exit::INTERNAL,
            message: message.into(),
        }
    }

    pub fn io(what: &str, path: &std::path::Path, e: std::io::Error) -> Self {
        Self::internal(format!("cannot {what} {}: {e}", path.display()))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Infeasible { .. } => exit::INFEASIBLE,
            Error::Convergence { .. } => exit::CONVERGENCE,
            Error::NonFinite { .. } | Error::Io { .. } | Error::Json(_) | Error::Csv(_) => {
                exit::INTERNAL
            }
            _ => exit::VALIDATION,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}
