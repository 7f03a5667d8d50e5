use thiserror::Error;

/// Errors raised anywhere in the pipeline.
///
/// The variants are grouped so that a command-line front end can map each
/// one onto a stable exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("training diverged at epoch {epoch}, batch {batch} (parameter norm {param_norm:.6e})")]
    Diverged {
        epoch: usize,
        batch: usize,
        param_norm: f64,
    },
    #[error("gradient tape already consumed")]
    TapeConsumed,
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}
