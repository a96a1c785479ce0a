use thiserror::Error;

use crate::io::ContainerError;

pub type Result<T> = std::result::Result<T, HoloError>;

#[derive(Debug, Error)]
pub enum HoloError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("sampling criterion violated: {0}")]
    Undersampled(String),

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error(transparent)]
    Container(#[from] ContainerError),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl HoloError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        HoloError::InvalidParameter(msg.into())
    }

    /// Short machine-readable category, used by the CLI error line.
    pub fn category(&self) -> &'static str {
        match self {
            HoloError::InvalidParameter(_) => "invalid-parameter",
            HoloError::ShapeMismatch { .. } => "shape-mismatch",
            HoloError::NonFinite(_) => "non-finite",
            HoloError::Undersampled(_) => "undersampled",
            HoloError::MissingInput(_) => "missing-input",
            HoloError::Container(_) => "container-format",
            HoloError::Io(_) => "io",
        }
    }
}
