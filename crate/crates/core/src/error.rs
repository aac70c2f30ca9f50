use thiserror::Error;

/// Errors raised by the inference library.
#[derive(Debug, Error)]
pub enum EckoError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// A single clustering run of the ensemble failed; `c` is its index.
    #[error("clustering run {c} failed: {source}")]
    Clustering {
        c: usize,
        #[source]
        source: Box<EckoError>,
    },
}

impl EckoError {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        EckoError::InvalidArgument(msg.into())
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        EckoError::DimensionMismatch(msg.into())
    }

    /// The innermost error, looking through `Clustering` wrappers.
    pub fn root(&self) -> &EckoError {
        match self {
            EckoError::Clustering { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, EckoError>;
