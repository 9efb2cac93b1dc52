use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate distribution: {0}")]
    Degenerate(String),

    #[error("numeric overflow: {0}")]
    NumericOverflow(String),

    #[error("lattice mismatch: {0}")]
    LatticeMismatch(String),

    #[error("malformed data: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for failures that come from the numbers rather than from the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NumericOverflow(_) | Error::Degenerate(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
