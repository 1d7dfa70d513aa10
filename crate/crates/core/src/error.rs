use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("graph is not acyclic: {0}")]
    Cyclic(String),

    #[error("generation failed at node {node}: {reason}")]
    Generation { node: usize, reason: String },

    #[error("numeric failure{}: {reason}", node.map(|j| format!(" at node {j}")).unwrap_or_default())]
    Numeric { node: Option<usize>, reason: String },

    #[error("constant column {column} cannot be standardized")]
    ConstantColumn { column: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("every search trial failed")]
    AllTrialsFailed,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn numeric(node: Option<usize>, reason: impl Into<String>) -> Self {
        Error::Numeric {
            node,
            reason: reason.into(),
        }
    }
}
