use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Affine georeferencing for an axis-aligned, north-up grid.
///
/// No rotation terms: world x grows with columns, world y shrinks with rows
/// (`pixel_size_y` is negative for north-up rasters). Integer pixel
/// coordinates address the top-left corner of a cell; the cell center sits at
/// `(col + 0.5, row + 0.5)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoTransform {
    pub origin_x: f64,
    pub origin_y: f64,
    /// Cell width in map units per pixel; strictly positive.
    pub pixel_size_x: f64,
    /// Cell height in map units per pixel; strictly negative (north-up).
    pub pixel_size_y: f64,
}

impl GeoTransform {
    pub fn new(origin_x: f64, origin_y: f64, pixel_size_x: f64, pixel_size_y: f64) -> Result<Self> {
        if !(pixel_size_x > 0.0) || !pixel_size_x.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "pixel_size_x must be finite and positive, got {pixel_size_x}"
            )));
        }
        if !(pixel_size_y < 0.0) || !pixel_size_y.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "pixel_size_y must be finite and negative, got {pixel_size_y}"
            )));
        }
        if !origin_x.is_finite() || !origin_y.is_finite() {
            return Err(Error::InvalidArgument("origin must be finite".into()));
        }
        Ok(Self {
            origin_x,
            origin_y,
            pixel_size_x,
            pixel_size_y,
        })
    }

    /// Map coordinates of fractional pixel `(col, row)`.
    pub fn pixel_to_world(&self, col: f64, row: f64) -> (f64, f64) {
        (
            self.origin_x + col * self.pixel_size_x,
            self.origin_y + row * self.pixel_size_y,
        )
    }

    /// Fractional `(col, row)` of a map coordinate; `floor` of each component
    /// gives the containing cell.
    pub fn world_to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x - self.origin_x) / self.pixel_size_x,
            (y - self.origin_y) / self.pixel_size_y,
        )
    }

    /// Map coordinates of the center of cell `(col, row)`.
    pub fn cell_center(&self, col: usize, row: usize) -> (f64, f64) {
        self.pixel_to_world(col as f64 + 0.5, row as f64 + 0.5)
    }

    /// Area of one cell in hectares.
    pub fn pixel_area_ha(&self) -> f64 {
        (self.pixel_size_x * self.pixel_size_y).abs() / 10_000.0
    }

    /// The six-element affine row used by the on-disk header:
    /// `(origin_x, pixel_size_x, 0, origin_y, 0, pixel_size_y)`.
    pub fn to_affine(&self) -> [f64; 6] {
        [
            self.origin_x,
            self.pixel_size_x,
            0.0,
            self.origin_y,
            0.0,
            self.pixel_size_y,
        ]
    }

    pub fn from_affine(a: [f64; 6]) -> Result<Self> {
        if a[2] != 0.0 || a[4] != 0.0 {
            return Err(Error::InvalidArgument(
                "rotation terms must be zero".into(),
            ));
        }
        Self::new(a[0], a[3], a[1], a[5])
    }
}

impl Default for GeoTransform {
    /// 10 m cells anchored at the map origin.
    fn default() -> Self {
        Self {
            origin_x: 0.0,
            origin_y: 0.0,
            pixel_size_x: 10.0,
            pixel_size_y: -10.0,
        }
    }
}
