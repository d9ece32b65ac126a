use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    /// One entry per violated constraint, collected before any work starts.
    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("inconsistent alignment labels: {0}")]
    InconsistentLabels(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("vector at index {index} has near-zero norm {norm:e}")]
    ZeroNorm { index: usize, norm: f64 },

    #[error("segment {0} is empty")]
    EmptySegment(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(vec![msg.into()])
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}
