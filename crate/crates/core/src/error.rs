use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("invalid state: {0}")]
    State(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("rank deficient: {0}")]
    Rank(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    /// True for errors caused by bad input (arguments, files, shapes), as
    /// opposed to failures while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Argument(_) | Error::Parse { .. } | Error::Dimension { .. } | Error::Format(_)
        )
    }
}
