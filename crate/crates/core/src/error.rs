use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An embedding row whose norm is too small to normalize.
    #[error("degenerate embedding{}: norm {norm:e} is below 1e-12", context.as_deref().map(|c| format!(" ({c})")).unwrap_or_default())]
    DegenerateEmbedding { norm: f64, context: Option<String> },

    #[error("pseudo-token slot has no vector supplied")]
    MissingPseudoVector,

    #[error("unknown token {0:?}")]
    UnknownToken(String),

    #[error("token sequence of length {len} exceeds the maximum of {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("unsupported checkpoint format: {0}")]
    UnsupportedFormat(String),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("stale artifact {}: {reason}", path.display())]
    StaleArtifact { path: PathBuf, reason: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn with_context(self, ctx: impl Into<String>) -> Self {
        match self {
            Error::DegenerateEmbedding { norm, .. } => Error::DegenerateEmbedding {
                norm,
                context: Some(ctx.into()),
            },
            other => other,
        }
    }
}

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::contract(format!($($arg)+)));
        }
    };
}
pub(crate) use ensure;
