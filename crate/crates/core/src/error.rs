use alloc::string::String;

/// Failures raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("grids differ")]
    GridMismatch,

    #[error("parameter outside the admissible set: {0}")]
    Admissibility(String),

    #[error("operator is numerically singular (zero pivot at row {row})")]
    Singular { row: usize },

    #[error("ensemble is empty")]
    EmptyEnsemble,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("operator norm estimate is zero; no step size can be derived")]
    ZeroOperator,
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn ensure_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
