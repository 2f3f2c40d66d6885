//! Raster grids, georeferencing and vector labels for the mapping
//! pipeline.
//!
//! The crate owns the on-disk container (a small little-endian format
//! with a fixed header and band-major samples), the affine transform
//! between pixel and map coordinates, polygon label ingestion with
//! even-odd rasterization, and the block-based train/validation split.

pub mod error;
pub mod geo;
pub mod grid;
pub mod io;
pub mod polygon;
pub mod split;

pub use error::{Error, Result};
pub use geo::GeoTransform;
pub use grid::{Dtype, Raster, Samples, DEFAULT_NODATA_F32, NODATA_LABEL};
pub use io::{read_raster, write_raster};
pub use polygon::{
    polygon_mask, rasterize_polygons, read_polygons, write_polygons, LabelPolygon, PolygonFile,
};
pub use split::{spatial_block_split, Split, SplitMask};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
