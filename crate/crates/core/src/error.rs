use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("malformed file at byte {offset}: {detail}")]
    Format { offset: usize, detail: String },

    #[error("truncated file: expected {expected} bytes, found {actual}")]
    Length { expected: usize, actual: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
