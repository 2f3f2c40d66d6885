use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("loss mask selects no pixels")]
    EmptyMask,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("checkpoint {path}: bad magic")]
    BadMagic { path: std::path::PathBuf },
    #[error("checkpoint {path}: unsupported version {version}")]
    UnsupportedVersion {
        path: std::path::PathBuf,
        version: u16,
    },
    #[error("checkpoint {path}: {detail}")]
    MalformedCheckpoint {
        path: std::path::PathBuf,
        detail: String,
    },
    #[error("io failure on {path}")]
    IoFailure {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
}
