use thiserror::Error;

/// Errors raised by the simulator and everything layered on top of it.
#[derive(Debug, Error)]
pub enum XbarError {
    /// A caller broke an operation's precondition (shapes, ranges, bounds).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// The nodal system could not be factored.
    #[error("solver failure: {0}")]
    Singular(String),

    #[error("solver did not reach tolerance {tolerance:e} (residual {residual:e})")]
    NonConvergence { residual: f64, tolerance: f64 },

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("model format error: {0}")]
    Format(String),

    #[error("checksum mismatch for {path}: expected {expected}, found {found}")]
    Checksum {
        path: String,
        expected: String,
        found: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl XbarError {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        XbarError::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        XbarError::InvalidConfig(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        XbarError::Format(msg.into())
    }

    /// True for failures of the numerical machinery, as opposed to bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            XbarError::Singular(_) | XbarError::NonConvergence { .. } | XbarError::Degenerate(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, XbarError>;
