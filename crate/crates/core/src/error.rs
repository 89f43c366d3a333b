use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: String,
        expected: String,
        got: String,
    },

    #[error(
        "matrix is not positive definite{}: pivot {pivot} is {value:e}; try a larger jitter",
        .dim.map(|j| format!(" (latent dimension {j})")).unwrap_or_default()
    )]
    NotPositiveDefinite {
        pivot: usize,
        value: f64,
        dim: Option<usize>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("training diverged at step {step}: {message}")]
    Divergence { step: usize, message: String },

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("unsupported format version {found} (this build reads version {supported})")]
    Version { found: u32, supported: u32 },

    #[error("incompatible inputs: {0}")]
    Compatibility(String),

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(context: impl Into<String>, expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    /// Attach the latent dimension index to a factorization failure.
    pub fn in_dimension(self, j: usize) -> Self {
        match self {
            Error::NotPositiveDefinite { pivot, value, .. } => Error::NotPositiveDefinite {
                pivot,
                value,
                dim: Some(j),
            },
            other => other,
        }
    }
}
