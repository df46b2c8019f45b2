use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("cluster {cluster} has no support (pseudo-label column sums to zero)")]
    DegenerateCluster { cluster: usize },

    #[error("non-finite values in {0}")]
    NonFinite(String),

    #[error("loss is infinite ({0}); set a positive log floor to keep gradients finite")]
    InfiniteLoss(String),

    #[error("solver diverged: {0}")]
    Divergence(String),

    #[error("training aborted at epoch {epoch}: non-finite loss (last good checkpoint: {})",
        checkpoint.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "none".into()))]
    TrainingDiverged {
        epoch: usize,
        checkpoint: Option<PathBuf>,
    },

    #[error("{what}: parse error at {location}: {message}")]
    Parse {
        what: String,
        location: String,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn parse(
        what: impl Into<String>,
        location: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Parse {
            what: what.into(),
            location: location.into(),
            message: message.into(),
        }
    }
}
