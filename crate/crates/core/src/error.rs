use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("input too short: need at least {needed} frames/samples, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("infeasible alignment: {frames} frames cannot emit {required} labels (incl. repeats)")]
    InfeasibleAlignment { frames: usize, required: usize },
    #[error("non-finite gradient, step skipped")]
    NonFiniteGradient,
    #[error("transcript encodes to an empty label sequence")]
    EmptyLabel,
    #[error("reference is empty, error rate undefined")]
    UndefinedErrorRate,
    #[error("too few items: need at least {needed}, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
