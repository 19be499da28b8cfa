use std::path::PathBuf;

/// Errors produced by the detectors, the trainer and the harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not positive semidefinite (min eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("de-correlation scaling is singular: |tr(W H)| = {0:e}")]
    SingularScaling(f64),

    #[error("channel matrix is rank deficient")]
    RankDeficient,

    #[error("linear system is not positive definite")]
    NotPositiveDefinite,

    #[error("enumeration needs {0} hypotheses, more than the allowed 1e6")]
    EnumerationBound(u128),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("symbol {0} is not in the constellation alphabet")]
    UnknownSymbol(f64),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serialize(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
