use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("instability: {0}")]
    Instability(String),
    #[error("model breakdown: {0}")]
    Breakdown(String),
    #[error("fixed point did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("unclassifiable queueing structure: {0}")]
    Unclassifiable(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;
