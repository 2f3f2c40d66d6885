use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Raster(#[from] raster::Error),
    #[error(transparent)]
    Autodiff(#[from] autodiff::error::Error),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("manifest {path}: {detail}")]
    Manifest {
        path: std::path::PathBuf,
        detail: String,
    },
    #[error("json failure on {path}")]
    Json {
        path: std::path::PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("csv failure on {path}")]
    Csv {
        path: std::path::PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("io failure on {path}")]
    IoFailure {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no usable patches: {0}")]
    NoPatches(String),
    #[error("training diverged at step {step}: loss {loss}")]
    DivergenceDetected { step: usize, loss: f64 },
    #[error("grids are not aligned: {0}")]
    GridMismatch(String),
    #[error("scene stack is empty")]
    EmptyStack,
    #[error("band {band} has {got} usable pixels, needs {need}")]
    TooFewSamples { band: usize, got: usize, need: usize },
    #[error("band {band} is degenerate: standard deviation {std:e}")]
    DegenerateBand { band: usize, std: f64 },
    #[error("no inputs given: {0}")]
    EmptyInput(&'static str),
    #[error("mask selects no pixels: {0}")]
    EmptyMask(&'static str),
    #[error("ensemble member {index} failed")]
    Member {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("recall is zero, bias factor undefined")]
    ZeroRecall,
    #[error("area is zero, yield undefined")]
    ZeroArea,
}
