use alloc::string::String;

/// Errors raised by the sampling core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("trajectory diverged: walker {walker} at step {step}")]
    DivergedTrajectory { walker: usize, step: u64 },

    #[error("ill-conditioned basis (p = {p}, delta = {delta}): only {retained} directions survive; use a larger delta or a smaller p")]
    IllConditionedBasis { p: usize, delta: f64, retained: usize },

    #[error("insufficient samples: need at least {needed}, have {have}")]
    InsufficientSamples { needed: usize, have: usize },

    #[error("degenerate fit: rank collapsed to zero at tree node {node}")]
    DegenerateFit { node: usize },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::error::Error::InvalidArgument(alloc::format!($($arg)*))
    };
}
pub(crate) use invalid;
