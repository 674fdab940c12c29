//! Crate-wide error type.

use nalgebra::DMatrix;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("shape mismatch for {what}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        what: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("point leaves the model support: {0}")]
    OutOfSupport(String),

    #[error("operation unsupported for this model kind: {0}")]
    UnsupportedModel(&'static str),

    #[error("sample set is empty")]
    EmptySamples,

    #[error("integrand evaluated to a non-finite value at {at:?}")]
    NonFiniteIntegrand { at: Vec<f64> },

    #[error(
        "support mismatch: log density ratio non-finite at {at:?} carrying probability mass {mass:.3e}"
    )]
    SupportMismatch { at: Vec<f64>, mass: f64 },

    #[error("metric is singular; null-space witness has {} direction(s)", null_space.ncols())]
    SingularMetric { null_space: DMatrix<f64> },

    #[error("tangent vectors do not share the required base density")]
    BaseMismatch,

    #[error("tangent vector is numerically zero")]
    ZeroTangent,

    #[error("estimator covariance has non-positive trace")]
    ZeroVariance,
}
