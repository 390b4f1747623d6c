use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("range error: {0}")]
    Range(String),

    #[error(
        "solver did not converge after {iterations} iterations (relative residual {residual:e})"
    )]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("singular operator: {0}")]
    Singular(String),

    #[error("effective matrix is not positive definite (eigenvalues {eigenvalues:?})")]
    NotPositiveDefinite { eigenvalues: Vec<f64> },

    #[error("undefined ratio: {0}")]
    UndefinedRatio(String),

    #[error("inequality violation: {0}")]
    InequalityViolation(String),

    #[error("zero-rate cell {cell}: the walk cannot leave it")]
    ZeroRate { cell: usize },

    #[error("degenerate medium: {0}")]
    Degenerate(String),

    #[error("statistics error: {0}")]
    Statistics(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
