use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("batch norm in train mode needs more than one element per channel")]
    SingleElementBatchNorm,

    #[error("cannot normalize a zero vector")]
    ZeroVector,

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("checkpoint: bad magic bytes")]
    BadMagic,

    #[error("checkpoint: unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("checkpoint: truncated file")]
    Truncated,

    #[error("dataset: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, expected: impl ToString, got: impl ToString) -> Error {
    Error::Shape {
        op,
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
