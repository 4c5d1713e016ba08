use alloc::string::String;
use alloc::vec::Vec;

use crate::schedule::LrPoint;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// Bessel-corrected statistics need at least two observations.
    #[error("{statistic} is undefined for sample size {n} (needs n >= 2)")]
    UndefinedStatistic { statistic: &'static str, n: usize },
    #[error("degenerate sample: {0}")]
    DegenerateSample(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("singular transform matrix (determinant {0})")]
    SingularMatrix(f64),
    #[error("non-finite {what} in layer `{layer}` at step {step}")]
    NonFiniteGradient { layer: String, step: usize, what: &'static str },
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("forward cache is stale: it was produced by different parameters")]
    StaleCache,
    #[error("learning-rate sweep diverged immediately ({} points recorded)", curve.len())]
    LrFinderDiverged { curve: Vec<LrPoint> },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
