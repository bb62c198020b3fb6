use thiserror::Error;

#[derive(Debug, Error)]
pub enum DevisError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("mask has no visible pixels")]
    EmptyMask,
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl DevisError {
    /// Process exit code: 2 for usage or configuration problems, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            DevisError::Config(_) | DevisError::Usage(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T, E = DevisError> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> DevisError {
    DevisError::InvalidArgument(msg.into())
}
