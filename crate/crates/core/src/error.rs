use std::path::PathBuf;

use crate::protocol::IterationTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A caller broke a precondition (length mismatch, infeasible input, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A bisection or bracketing loop ran out of iterations.
    #[error("solver did not converge after {iters} iterations (last bracket [{lo}, {hi}])")]
    Solver { iters: usize, lo: f64, hi: f64 },

    #[error("protocol error: {0}")]
    Protocol(String),

    /// The bidding loop hit `max_rounds` without a STOP. The trace is kept for diagnosis.
    #[error("bidding protocol did not converge within {rounds} rounds")]
    NonConvergence {
        rounds: usize,
        trace: Box<IterationTrace>,
    },

    #[error("grid search refused: {apps} applications exceed the limit of {limit}")]
    GridGuard { apps: usize, limit: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. }
            | Error::Validation(_)
            | Error::Domain(_)
            | Error::Contract(_)
            | Error::Protocol(_)
            | Error::GridGuard { .. } => 2,
            Error::NonConvergence { .. } | Error::Solver { .. } => 3,
            Error::Io { .. } | Error::Csv { .. } => 4,
        }
    }
}
