//! Error type shared across the crate, grouped so the CLI can map
//! variants onto its stable exit codes.

use thiserror::Error;

use crate::estimation::FitResult;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration (file or in-memory) is invalid or inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// A numerical procedure failed (singular system, no peak, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// An iterative fit ran out of iterations. The best parameters seen
    /// are carried along so callers can inspect or reuse them.
    #[error("fit did not converge within {iterations} iterations (best cost {best_cost:.6e})")]
    NonConvergence {
        iterations: usize,
        best_cost: f64,
        best: Box<FitResult>,
    },

    /// A text input could not be parsed; `line` is 1-based.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
