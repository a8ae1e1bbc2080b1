use thiserror::Error;

/// Errors raised by the training engine, the accountant and the data readers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid shape for {op}: {detail}")]
    InvalidShape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("label {label} at example {index} is out of range for {classes} classes")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        classes: usize,
    },

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),

    #[error("parameter `{0}` is consumed by more than one recorded operation")]
    ParamReused(String),

    #[error("parse error at position {position}: {message}")]
    Parse { position: usize, message: String },

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("privacy target unreachable: {0}")]
    Unreachable(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
