use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown activation `{0}`")]
    UnknownActivation(String),

    #[error("activation `{0}` has infinite slope constants and cannot be certified")]
    InfiniteConstants(String),

    #[error("normalization layer `{0}` is not Lipschitz-constrained and is rejected")]
    NormalizationRejected(String),

    #[error("invalid activation parameter: {0}")]
    InvalidActivationParam(String),

    #[error("first-layer activation `{name}` is invalid: {reason}")]
    InvalidFirstActivation { name: String, reason: String },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {off_norm:e})")]
    NoConvergence { sweeps: usize, off_norm: f64 },

    #[error("non-finite gradient at parameter {index}")]
    NonFiniteGradient { index: usize },

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("model format error: {0}")]
    Format(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("csv error at line {line}: {message}")]
    Csv { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
