use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Tensor(#[from] cgs_tensor::TensorError),
    #[error("invalid label map: {0}")]
    InvalidLabel(String),
    #[error("invalid proportions: {0}")]
    InvalidProportions(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dataset generation failed: {0}")]
    DatasetGeneration(String),
    #[error("PGM parse error at byte {offset}: {msg}")]
    PgmParse { offset: usize, msg: String },
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
    #[error("training aborted: {0}")]
    Training(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
