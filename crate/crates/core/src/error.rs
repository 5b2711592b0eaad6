use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the library.
///
/// `InvalidConfig`, `ConditionViolated` and `Infeasible` describe bad inputs
/// to an operation; the remaining variants are numeric failures.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("condition violated: {0}")]
    ConditionViolated(String),

    #[error("infeasible parameters: {0}")]
    Infeasible(String),
}

impl Error {
    /// True for precondition/configuration failures, false for numeric ones.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_) | Error::ConditionViolated(_) | Error::Infeasible(_)
        )
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}
