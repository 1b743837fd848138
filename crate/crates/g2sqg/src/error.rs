use thiserror::Error;

/// Errors surfaced by every module in the crate.
#[derive(Error, Debug)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("masked softmax: slice {slice} along axis {axis} is fully masked")]
    DegenerateSlice { axis: usize, slice: usize },
    #[error("non-finite value produced by {0}")]
    Numeric(&'static str),
    #[error("config error: {0}")]
    Config(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("validation error in example `{example_id}`, field `{field}`: {message}")]
    Validation {
        example_id: String,
        field: &'static str,
        message: String,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("metric error: {0}")]
    Metric(String),
    #[error("checkpoint integrity error: {0}")]
    Integrity(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
