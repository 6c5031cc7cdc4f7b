use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("only {found} positive eigenvalues, {requested} requested")]
    InsufficientRank { requested: usize, found: usize },

    #[error("matrix not positive definite at {context}: min eigenvalue {min_eig:e}")]
    NotPositiveDefinite { context: String, min_eig: f64 },

    #[error("empty quadrature rule")]
    EmptyRule,

    #[error("model evaluation failed at node {node} ({location}): {reason}")]
    NodeEvaluation {
        node: usize,
        location: String,
        reason: String,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("non-finite posterior at step {step}: {detail}")]
    NonFinite { step: u64, detail: String },

    #[error("bad file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        });
    }
    Ok(())
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(e.to_string())
    }
}
