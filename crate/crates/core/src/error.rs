use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch (shapes {shapes:?})")]
    Dimension { op: String, shapes: Vec<Vec<usize>> },

    #[error("{op}: domain error: {detail}")]
    Domain { op: String, detail: String },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("optimization diverged at iteration {iteration}: {detail}")]
    Optimization { iteration: usize, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn dimension(op: &str, shapes: &[&[usize]]) -> Self {
        Error::Dimension {
            op: op.to_string(),
            shapes: shapes.iter().map(|s| s.to_vec()).collect(),
        }
    }

    pub(crate) fn domain(op: &str, detail: impl Into<String>) -> Self {
        Error::Domain {
            op: op.to_string(),
            detail: detail.into(),
        }
    }

    pub(crate) fn contract(detail: impl Into<String>) -> Self {
        Error::Contract(detail.into())
    }

    /// True for failures caused by numerics rather than by bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Domain { .. } | Error::Optimization { .. })
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(format!("json: {e}"))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
