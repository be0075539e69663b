//! Error type shared by every module.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not symmetric: |a[{i}][{j}] - a[{j}][{i}]| = {gap:e}")]
    NotSymmetric { i: usize, j: usize, gap: f64 },

    #[error("matrix is not positive definite: lambda_min = {lambda_min:e}, lambda_max = {lambda_max:e}")]
    NotPositiveDefinite { lambda_min: f64, lambda_max: f64 },

    #[error("factorization failure: {0}")]
    FactorizationFailure(String),

    #[error("invalid tolerance: {0}")]
    InvalidTolerance(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("step size too large: h = {h:e} exceeds h_max = {h_max:e}")]
    StepSizeTooLarge { h: f64, h_max: f64 },

    #[error("bias dominates: eps = {eps:e} must exceed 3*Gamma^2*b = {floor:e}; admissible interval is (3*Gamma^2*b, sqrt(3*tr Sigma)] = ({floor:e}, {ceiling:e}]; decrease h or increase eps")]
    BiasDominates { eps: f64, floor: f64, ceiling: f64 },

    #[error("eps too large: eps = {eps:e} exceeds the admissible upper bound {bound:e} ({rule})")]
    EpsilonTooLarge { eps: f64, bound: f64, rule: String },

    #[error("eps out of range: eps = {eps:e}; requires eps <= {first_rule} = {first:e} and eps <= {second_rule} = {second:e}")]
    EpsilonOutOfRange {
        eps: f64,
        first: f64,
        first_rule: String,
        second: f64,
        second_rule: String,
    },

    #[error("inadmissible tolerance: delta*Delta = {value:e} must satisfy {lower_rule} = {lower:e} < delta*Delta <= {upper_rule} = {upper:e}")]
    InadmissibleTolerance {
        value: f64,
        lower: f64,
        lower_rule: String,
        upper: f64,
        upper_rule: String,
    },

    #[error("insufficient learning sample size: requested {requested}, required at least {required}")]
    InsufficientLearnSize { requested: usize, required: usize },

    #[error("degenerate ensemble: {0}; increase the ensemble size")]
    DegenerateEnsemble(String),

    #[error("numerical failure at iteration {iteration}: {detail}")]
    NumericalFailure {
        iteration: u64,
        detail: String,
        state: Vec<f64>,
    },

    #[error("unsupported target: {0}")]
    UnsupportedTarget(String),

    #[error("oracle too large: d*N = {size} exceeds {limit}")]
    OracleTooLarge { size: usize, limit: usize },

    #[error("unstable recursion: spectral radius of the drift matrix is {radius} >= 1")]
    Instability { radius: f64 },

    #[error("precondition unverified: {0}")]
    PreconditionUnverified(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// True for errors caused by inadmissible inputs or schedules, as opposed
    /// to numerical breakdowns during a computation.
    pub fn is_admissibility(&self) -> bool {
        matches!(
            self,
            Error::DimensionMismatch { .. }
                | Error::NotSymmetric { .. }
                | Error::NotPositiveDefinite { .. }
                | Error::InvalidTolerance(_)
                | Error::Parameter(_)
                | Error::StepSizeTooLarge { .. }
                | Error::BiasDominates { .. }
                | Error::EpsilonTooLarge { .. }
                | Error::EpsilonOutOfRange { .. }
                | Error::InadmissibleTolerance { .. }
                | Error::InsufficientLearnSize { .. }
                | Error::UnsupportedTarget(_)
                | Error::OracleTooLarge { .. }
                | Error::PreconditionUnverified(_)
                | Error::Parse(_)
                | Error::Io(_)
        )
    }

    /// Attach an iteration index to a numerical failure raised inside a kernel.
    pub fn at_iteration(self, iteration: u64) -> Self {
        match self {
            Error::NumericalFailure { detail, state, .. } => Error::NumericalFailure {
                iteration,
                detail,
                state,
            },
            other => other,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}
