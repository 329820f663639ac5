use thiserror::Error;

/// Errors raised by the solver stack.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value produced during {stage}")]
    NonFinite { stage: &'static str },

    #[error("matrix is not positive definite (smallest eigenvalue {eigenvalue:e})")]
    NotPositiveDefinite { eigenvalue: f64 },

    #[error("CG breakdown at iteration {iteration}: p^T A p = {curvature:e} is not positive")]
    Breakdown { iteration: usize, curvature: f64 },

    #[error("non-finite CG scalar at iteration {iteration}")]
    NonFiniteScalar { iteration: usize },

    #[error("empty CG history")]
    EmptyHistory,

    #[error("requested {requested} Ritz pairs but only {available} are available")]
    TooManyPairs { requested: usize, available: usize },

    #[error("basis is not orthonormal (Gram deviation {deviation:e})")]
    NotOrthonormal { deviation: f64 },

    #[error("sample matrix has numerical rank 0")]
    RankCollapse,

    #[error("rank-deficient matrix: numerical rank {rank} of {cols} columns")]
    RankDeficient { rank: usize, cols: usize },

    #[error(
        "Cholesky factorization of Z^T A Z failed; the projected matrix is numerically \
         indefinite (increase the oversampling or add jitter to the operator)"
    )]
    CholeskyFailed,

    #[error("non-positive Ritz value {value:e} at index {index}")]
    NonPositiveRitzValue { index: usize, value: f64 },

    #[error("dense assembly of a {dim}x{dim} operator exceeds the cap of {cap}")]
    DenseCapExceeded { dim: usize, cap: usize },

    #[error("deterministic preconditioner requested without a previous inner loop")]
    NoPreviousLoop,
}

impl Error {
    /// Name of the component an error originates from, for diagnostics.
    pub fn module(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } | Error::InvalidParameter(_) => "input",
            Error::NonFinite { .. } | Error::DenseCapExceeded { .. } => "operators",
            Error::NotPositiveDefinite { .. } => "covariance",
            Error::Breakdown { .. } | Error::NonFiniteScalar { .. } | Error::EmptyHistory => "krylov",
            Error::TooManyPairs { .. } | Error::NonPositiveRitzValue { .. } => "lmp",
            Error::NotOrthonormal { .. }
            | Error::RankCollapse
            | Error::RankDeficient { .. }
            | Error::CholeskyFailed => "randevd",
            Error::NoPreviousLoop => "assimilation",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}

pub(crate) fn check_finite(stage: &'static str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { stage })
    }
}
