use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("class {0} has no examples")]
    EmptyClass(usize),
    #[error("label index {label} out of range for {k} classes")]
    LabelOutOfRange { label: usize, k: usize },
    /// No candidate split separates the node; the caller should emit a leaf.
    #[error("no valid split")]
    NoValidSplit,
    /// The surrogate objective diverged, usually because the learning rate is too large.
    #[error("non-finite objective during optimization")]
    NonFinite,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("model file: {0}")]
    Model(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
