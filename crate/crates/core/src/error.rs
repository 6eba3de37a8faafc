use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("out of range: {0}")]
    Range(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    /// A risk model violates its structural invariants (nonpositive specific
    /// variance, non-PD factor covariance, ...).
    #[error("invalid risk model: {0}")]
    Model(String),

    /// A linear system could not be solved reliably.
    #[error("numerical failure: {message} (condition estimate {condition:.3e})")]
    Numerical { message: String, condition: f64 },

    #[error("degenerate solution: {0}")]
    Degenerate(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("root solver failed: {0}")]
    Solver(String),

    #[error("did not converge: {0}")]
    NonConvergence(String),

    #[error("undefined ratio: {0}")]
    UndefinedRatio(String),

    #[error("lookahead violation: strategy at date column {date} requested column {requested}")]
    Lookahead { date: usize, requested: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for failures caused by bad numbers rather than bad input or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Numerical { .. }
                | Error::Degenerate(_)
                | Error::Infeasible(_)
                | Error::Solver(_)
                | Error::NonConvergence(_)
                | Error::UndefinedRatio(_)
        )
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_) | Error::Csv(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
