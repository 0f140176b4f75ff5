use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown prompt id `{0}`")]
    UnknownPrompt(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// The database script for a fixture did not apply to an empty database.
    #[error("fixture `{fixture_id}` failed to apply: {message}")]
    Fixture { fixture_id: String, message: String },

    /// A task is malformed, e.g. its ground-truth query does not execute.
    #[error("task `{task_id}`: {message}")]
    Task { task_id: String, message: String },

    #[error("task `{task_id}` references unknown fixture `{fixture_id}`")]
    UnresolvedFixture { task_id: String, fixture_id: String },

    #[error("signal table does not match the problem: {0}")]
    Shape(String),

    #[error("non-finite value at iteration {iteration}: {what}")]
    NonFinite { iteration: usize, what: String },

    #[error("no policy satisfies all constraints (best achievable worst-case slack {slack:.3e})")]
    Infeasible { slack: f64 },

    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
