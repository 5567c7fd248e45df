use thiserror::Error;

/// Errors raised by the scoring stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),

    #[error("sequence length {len} outside [1, {max}]")]
    SequenceLength { len: usize, max: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("token budget {budget} smaller than the {required} tokens outside the description")]
    BudgetTooSmall { budget: usize, required: usize },

    #[error("grade {0} outside [0, 4]")]
    GradeOutOfRange(u8),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid probability distribution: {0}")]
    InvalidDistribution(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
