use thiserror::Error;

/// Errors raised across the tracker pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Shape(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("index {index} out of range 0..={bound}")]
    Index { index: usize, bound: usize },
    #[error("indicator out of frame bounds: {0}")]
    Bounds(String),
    #[error("degenerate indicator: {0}")]
    Degenerate(String),
    #[error("token id {id} not in vocabulary of size {size}")]
    Vocab { id: usize, size: usize },
    #[error("operator {operator} is unstable at step k={k} (division by {divisor})")]
    Instability { operator: &'static str, k: usize, divisor: f64 },
    #[error("target lost: saliency map is all zero")]
    LostTarget,
    #[error("text bootstrap failed: {0}")]
    BootstrapFailed(String),
    #[error("finetuning diverged at step {step}: loss = {loss}")]
    Divergence { step: usize, loss: f64 },
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
    #[error("scene spec error: {0}")]
    Spec(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
