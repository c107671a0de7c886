use thiserror::Error;

/// Errors raised by the estimator, the inference routines and the simulation engine.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EivError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite entry in {matrix} at row {row}, column {col}")]
    NonFinite {
        matrix: &'static str,
        row: usize,
        col: usize,
    },

    #[error("too few rows: m = {m} but n + d = {required}")]
    TooFewRows { m: usize, required: usize },

    #[error("error variance must be positive, got {0}")]
    NonPositiveVariance(f64),

    #[error("no TLS solution: the response block of the right singular basis is singular (ratio {ratio:.3e})")]
    NoSolution { ratio: f64 },

    #[error("variance estimate {value:.3e} is negative beyond round-off (scale {scale:.3e})")]
    NegativeVariance { value: f64, scale: f64 },

    #[error("V_A is not positive definite")]
    SingularVA,

    #[error("direction u must be nonzero")]
    ZeroDirection,

    #[error("ellipsoid shape matrix is not positive definite; the design is likely degenerate")]
    SingularShape,

    #[error("domain error: {0}")]
    DomainError(String),

    #[error("VA_target - mu_a mu_a^T is not positive definite")]
    InvalidMoments,

    #[error("invalid study spec at `{field}`: {reason}")]
    SpecInvalid { field: String, reason: String },

    #[error("every replication failed at m = {m}")]
    StudyInvalid { m: usize },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

pub type Result<T> = std::result::Result<T, EivError>;

impl EivError {
    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        EivError::DimensionMismatch(msg.into())
    }

    pub(crate) fn spec(field: impl Into<String>, reason: impl Into<String>) -> Self {
        EivError::SpecInvalid {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
