use thiserror::Error;

/// Why a chain failed the ergodicity check.
#[derive(Debug, Clone, PartialEq)]
pub enum ErgodicityFailure {
    /// No path from `from` to `to` in the positive-transition digraph.
    NotIrreducible { from: usize, to: usize },
    /// All return times to a reference state share a common divisor `period` > 1.
    Periodic { state: usize, period: usize },
}

impl std::fmt::Display for ErgodicityFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ErgodicityFailure::NotIrreducible { from, to } => {
                write!(
                    f,
                    "not irreducible: state {to} is unreachable from state {from}"
                )
            }
            ErgodicityFailure::Periodic { state, period } => {
                write!(f, "periodic: state {state} has period {period}")
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("invalid input in {context}: {detail}")]
    InvalidInput {
        context: &'static str,
        detail: String,
    },

    #[error("row {row} of {context} sums to {sum}, expected 1 within {tol:e}")]
    RowSum {
        context: &'static str,
        row: usize,
        sum: f64,
        tol: f64,
    },

    #[error("chain is not ergodic: {0}")]
    NotErgodic(ErgodicityFailure),

    #[error("stationary distribution has not been computed for this chain")]
    StationaryNotComputed,

    #[error("numerical failure in {context}: residual {residual:e} exceeds tolerance {tol:e}")]
    NumericalFailure {
        context: &'static str,
        residual: f64,
        tol: f64,
    },

    #[error(
        "feature matrix is rank deficient: smallest singular value {sigma_min:e} \
         vs largest {sigma_max:e}"
    )]
    RankDeficient { sigma_min: f64, sigma_max: f64 },

    #[error("system matrix is numerically singular (condition number {cond:e})")]
    SingularSystem { cond: f64 },

    #[error("algorithm constant c = {c} must exceed 30 + sqrt(1302) = {threshold}")]
    ConstantBelowThreshold { c: f64, threshold: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
