use thiserror::Error;

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("token id {id} outside vocabulary of {vocab}")]
    TokenOutOfVocab { id: u32, vocab: usize },

    #[error("sequence of {len} tokens exceeds max_seq {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("loss mask selects no positions")]
    EmptyMask,

    #[error("invalid loss mask: {0}")]
    BadMask(String),

    #[error("loss became non-finite at step {step}")]
    DivergenceDetected { step: usize },

    #[error("gradient check failed at {} coordinates, worst {worst}", .offenders.len())]
    GradMismatch {
        offenders: Vec<GradOffender>,
        worst: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Tokenizer(#[from] ptk_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradOffender {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}
