use thiserror::Error;

#[derive(Debug, Error)]
pub enum PanError {
    #[error("dimension error: {0}")]
    Shape(String),
    #[error("index error: {0}")]
    Index(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("build error at layer {layer}: {reason}")]
    Build { layer: usize, reason: String },
    #[error("parse error at byte offset {offset}: {reason}")]
    Parse { offset: usize, reason: String },
    #[error("non-finite loss in stage {stage} at epoch {epoch}")]
    NonFinite { stage: &'static str, epoch: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, PanError>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(PanError::Shape(msg.into()))
}
