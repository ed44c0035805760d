use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate operator: {0}")]
    Degenerate(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("source condition violated for nu = {nu}: range residual {residual:e} exceeds {threshold:e}")]
    RangeViolation {
        nu: f64,
        residual: f64,
        threshold: f64,
    },

    #[error("path budget exceeded: {paths} paths to evaluate, budget is {budget}")]
    PathBudget { paths: f64, budget: u64 },

    #[error("iteration diverged at epoch {epoch} (c0 = {c0:e}, squared error {error_sq:e})")]
    Divergence { epoch: f64, c0: f64, error_sq: f64 },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
