use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("non-finite state at step {step}: closed loop blew up")]
    Blowup { step: usize },

    #[error("invalid distribution parameters: {0}")]
    InvalidDistribution(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("variable does not belong to this tape")]
    NotOnTape,

    #[error("{op} of non-positive operand {value}")]
    NonPositiveOperand { op: &'static str, value: f64 },

    #[error("non-finite gradient for particle {particle}")]
    NonFiniteGradient { particle: usize },

    #[error("{what} did not converge within {iterations} iterations")]
    NonConvergence { what: &'static str, iterations: usize },

    #[error("optimization diverged at step {step}: objective {objective} (initial {initial})")]
    Divergence {
        step: usize,
        objective: f64,
        initial: f64,
    },

    #[error("bootstrap could not draw a resample with a non-empty out-of-bag set")]
    EmptyOutOfBag,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by numerics rather than by bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Blowup { .. }
                | Error::NonFiniteGradient { .. }
                | Error::NonConvergence { .. }
                | Error::Divergence { .. }
                | Error::NonPositiveOperand { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
