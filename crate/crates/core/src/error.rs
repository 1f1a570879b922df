use thiserror::Error;

/// Unified error type for the whole pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Column mapping / expansion recipe problems (wrong names, duplicates, bad knots).
    #[error("schema error: {0}")]
    Schema(String),

    /// Malformed input values; `row` is the 1-based data row (excluding the header).
    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },

    /// Data that cannot support estimation (all censored, empty kept subsample, ...).
    #[error("degenerate data: {0}")]
    DegenerateData(String),

    /// Invalid argument values (quantile outside (0,1), K > n, bad rule constants, ...).
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A solver exhausted its iteration budget or diverged. Carries the last iterate
    /// so callers can inspect how far it got; never returned as a silent result.
    #[error("solver failed to converge after {iterations} iterations: {context}")]
    NonConvergence {
        context: String,
        iterations: usize,
        last_iterate: Vec<f64>,
    },

    /// A linear system lost rank beyond what collinearity pruning can absorb.
    #[error("rank-deficient system: {0}")]
    RankDeficient(String),

    /// A fitted object failed a quality gate (for example crossing quantile fits).
    #[error("quality check failed: {0}")]
    Quality(String),

    /// The moment Jacobian is numerically zero; reports per-fold contributions.
    #[error("singular Jacobian {jacobian:.3e} (per-fold contributions {per_fold:?})")]
    SingularJacobian { jacobian: f64, per_fold: Vec<f64> },

    /// A fold carries no score information at any candidate theta.
    #[error("degenerate fold {fold}: {msg}")]
    DegenerateFold { fold: usize, msg: String },

    /// The 1-D objective search could not produce a finite minimum.
    #[error("search error: {0}")]
    Search(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
