use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is not positive-definite: {0}")]
    NotPositiveDefinite(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("p = {p} exceeds the rank available in the data ({rank})")]
    Rank { p: usize, rank: usize },

    #[error("all {0} restarts failed; first error: {1}")]
    AllRestartsFailed(usize, String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors caused by bad inputs rather than a failed computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter(_)
                | Error::Validation(_)
                | Error::Dimension(_)
                | Error::Rank { .. }
                | Error::Parse(_)
                | Error::Csv(_)
                | Error::Json(_)
        )
    }
}
