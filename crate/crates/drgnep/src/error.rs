//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by model construction, reformulation, and solving.
#[derive(Debug, Error)]
pub enum Error {
    /// Two pieces of problem data disagree about a dimension.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A cost matrix failed the symmetric positive-definite check.
    #[error("agent {agent}: Q is not symmetric positive definite ({detail})")]
    NotPositiveDefinite { agent: usize, detail: String },

    /// A box bound is infinite, NaN, or inverted.
    #[error("invalid box bounds: {0}")]
    InvalidBox(String),

    /// Problem data is structurally invalid (empty local set, bad epsilon, ...).
    #[error("invalid problem data: {0}")]
    InvalidData(String),

    /// A combinatorial or stacked dimension exceeds a hard cap.
    #[error("size {size} exceeds the supported cap {cap}")]
    TooLarge { size: usize, cap: usize },

    /// A quadratic subproblem had no feasible point.
    #[error("infeasible subproblem: maximum constraint violation {max_violation:.3e}")]
    Infeasible { max_violation: f64 },

    /// An iterative routine exhausted its budget without converging.
    #[error("budget exhausted: {0}")]
    BudgetExhausted(String),

    /// Numerical failure in a dense factorization.
    #[error("linear algebra failure: {0}")]
    Numerical(String),

    /// File / serialization problems (CLI and io module).
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed JSON in a problem or point file.
    #[error("parse error: {0}")]
    Parse(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
