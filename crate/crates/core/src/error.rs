use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("token id {id} outside vocabulary of size {vocab}")]
    OutOfVocabulary { id: usize, vocab: usize },

    #[error("video has {len} frames, maximum is {max}")]
    TooManyFrames { len: usize, max: usize },

    #[error("no valid frames")]
    NoValidFrames,

    #[error("positive set is empty")]
    EmptyPositives,

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("truncated file: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("unsupported format version {found} (expected {expected})")]
    UnknownVersion { found: u32, expected: u32 },

    #[error("bad format: {0}")]
    Format(String),

    #[error("task mismatch: checkpoint trained for {checkpoint}, asked for {requested}")]
    TaskMismatch { checkpoint: String, requested: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
