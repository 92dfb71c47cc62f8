use thiserror::Error;

/// Errors shared by every numerical module in this crate.
#[derive(Debug, Error)]
pub enum OmError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// A computation produced a non-finite value. The node index locates
    /// the first offending grid point when one is known.
    #[error("numerical failure: {message}{}", node.map(|i| format!(" (node {i})")).unwrap_or_default())]
    NumericalFailure {
        message: String,
        node: Option<usize>,
    },
}

impl OmError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        OmError::InvalidArgument(msg.into())
    }

    pub fn numerical(msg: impl Into<String>, node: Option<usize>) -> Self {
        OmError::NumericalFailure {
            message: msg.into(),
            node,
        }
    }
}

pub type Result<T> = std::result::Result<T, OmError>;
