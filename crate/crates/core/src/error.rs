use std::fmt;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Why power iteration failed to produce a stationary distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvergenceCause {
    /// The recurrent class has period > 1, so the iterates oscillate.
    Periodic { period: usize },
    /// More than one closed class: the limit depends on the start vector.
    MultipleClosedClasses { count: usize },
    /// The residual did not drop below tolerance within the iteration budget.
    IterationLimit,
}

impl fmt::Display for ConvergenceCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConvergenceCause::Periodic { period } => write!(f, "chain is periodic (period {period})"),
            ConvergenceCause::MultipleClosedClasses { count } => {
                write!(f, "chain has {count} closed classes")
            }
            ConvergenceCause::IterationLimit => write!(f, "iteration limit reached"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("stationary distribution did not converge after {iterations} iterations (residual {residual:.3e}): {cause}")]
    NotConverged {
        iterate: Vec<f64>,
        residual: f64,
        iterations: usize,
        cause: ConvergenceCause,
    },

    #[error("sequence {sequence} has zero probability under every cluster")]
    Degenerate { sequence: usize },

    #[error("line {line}: {reason}")]
    Parse { line: u64, reason: String },

    #[error("line {line}: unknown category {name:?}")]
    UnknownCategory { line: u64, name: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
