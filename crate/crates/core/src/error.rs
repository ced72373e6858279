use thiserror::Error;

use crate::schedule::ScheduleViolation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Everything that can go wrong inside the codec.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected} components, found {found}")]
    ShapeMismatch { expected: usize, found: usize },

    #[error("invalid shape {0}x{1}x{2}: every dimension must be at least 1")]
    InvalidShape(usize, usize, usize),

    #[error("non-finite value at component {index}")]
    NonFinite { index: usize },

    #[error("sigma must be strictly positive (component {index} has {value})")]
    NonPositiveSigma { index: usize, value: f64 },

    #[error("invalid schedule: {0}")]
    Schedule(#[from] ScheduleViolation),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("value {value} lies outside its interval [{lb}, {ub}]")]
    OutOfInterval { value: f64, lb: f64, ub: f64 },

    #[error("sub-interval index {k} is not a valid interval")]
    InvalidIndex { k: i64 },

    #[error("interval [{lb}, {ub}] needs more than {limit} sub-intervals at step {step}")]
    TooManyIntervals { lb: f64, ub: f64, step: f64, limit: usize },

    #[error("degenerate PMF: parent interval [{lb}, {ub}] has no mass under sigma {sigma}")]
    DegeneratePmf { lb: f64, ub: f64, sigma: f64 },

    #[error("symbol {k} is outside the PMF support")]
    SymbolOutOfSupport { k: i64 },

    #[error("entropy decoder ran past the end of a complete segment")]
    StreamExhausted,

    #[error("invalid progress point {0}")]
    InvalidPoint(f64),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            reason: reason.into(),
        }
    }

    /// True for failures that indicate a broken invariant inside the codec
    /// rather than bad input.
    pub fn is_internal(&self) -> bool {
        matches!(
            self,
            Error::OutOfInterval { .. } | Error::InvalidIndex { .. } | Error::SymbolOutOfSupport { .. }
        )
    }
}
