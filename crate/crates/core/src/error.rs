use thiserror::Error;

/// Errors produced anywhere in the message-passing stack.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid message: {0}")]
    InvalidMessage(String),

    #[error("singular scale factor: a = {0}")]
    SingularScale(f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("rate code has no activity (all rates are zero)")]
    EmptyCode,

    #[error("network graph error: {0}")]
    Graph(String),

    #[error("equality node has no trained weights")]
    NotTrained,

    #[error("malformed {what}: {detail}")]
    Malformed { what: &'static str, detail: String },

    #[error("neuron count mismatch: file has N={found}, expected N={expected}")]
    SizeMismatch { expected: usize, found: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("usage: {0}")]
    Usage(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
