use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by raster containers, file IO and grid operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: bad magic bytes (expected \"CRAS\")")]
    BadMagic { path: PathBuf },

    #[error("{path}: unsupported format version {version}")]
    UnsupportedVersion { path: PathBuf, version: u16 },

    #[error("{path}: unsupported dtype code {code}")]
    UnsupportedDtype { path: PathBuf, code: u8 },

    #[error("{path}: declared dimensions {width}x{height}x{bands} overflow or exceed the sample cap")]
    DimensionOverflow {
        path: PathBuf,
        width: u32,
        height: u32,
        bands: u16,
    },

    #[error("{path}: file ends before the declared sample payload")]
    TruncatedFile { path: PathBuf },

    #[error("{path}: trailing bytes after the declared sample payload")]
    TrailingBytes { path: PathBuf },

    #[error("io failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("sample buffer length {got} does not match {expect} (width*height*bands)")]
    DataLength { expect: usize, got: usize },

    #[error("non-finite sample at band {band}, index {index}")]
    NonFiniteSample { band: usize, index: usize },

    #[error("degenerate ring: {reason}")]
    DegenerateRing { reason: String },

    #[error("polygon class {0} is not a valid label class (expected 0 or 1)")]
    InvalidClass(u8),

    #[error("label raster contains no labeled pixels")]
    NoLabeledPixels,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("polygon JSON parse failure in {path}: {source}")]
    PolygonJson {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
