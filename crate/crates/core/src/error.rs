use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("insufficient data: need at least {needed}, got {got}")]
    Insufficient { needed: usize, got: usize },

    #[error("invalid GPD fit: {0}")]
    InvalidFit(String),

    #[error("singular weighted design at t0 = {0}")]
    Singular(f64),

    #[error("unknown name `{0}`")]
    UnknownName(String),

    #[error("unpaired results: {0}")]
    Unpaired(String),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
