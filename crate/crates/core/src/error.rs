use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("malformed ply {element}: {message}")]
    Parse { element: String, message: String },

    #[error("ply schema error: missing property `{0}`")]
    MissingProperty(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("corrupt data: {0}")]
    Corruption(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("traffic ledger is empty")]
    EmptyLedger,

    #[error("ledgers come from different scenes ({0:016x} vs {1:016x})")]
    SceneMismatch(u64, u64),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(element: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            element: element.into(),
            message: message.into(),
        }
    }
}
