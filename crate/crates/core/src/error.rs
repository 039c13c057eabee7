use thiserror::Error;

/// Errors produced by portfolio construction, forecasting, and simulation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("Cholesky factorization failed: matrix is not positive definite")]
    CholeskyFailed,

    #[error("matrix is singular or near-singular")]
    SingularMatrix,

    #[error("insufficient data for {context}: need at least {required}, got {actual}")]
    InsufficientData {
        context: &'static str,
        required: usize,
        actual: usize,
    },

    #[error("solver setup failed: {0}")]
    SolverSetup(String),

    #[error("solve did not reach optimality: status {0:?}")]
    NotOptimal(crate::solver::SolveStatus),

    #[error(
        "minimum-holding pass 2 infeasible ({pinned_zero} pinned to zero, \
         {forced_long} forced long, {forced_short} forced short)"
    )]
    MinHoldingInfeasible {
        pinned_zero: usize,
        forced_long: usize,
        forced_short: usize,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
