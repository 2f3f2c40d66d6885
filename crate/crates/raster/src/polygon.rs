//! Polygon labels: JSON interchange, point-in-polygon tests and
//! rasterization onto a pixel grid.
//!
//! Coordinates are map units. A polygon holds one or more rings; parity
//! over all rings decides containment (even-odd rule), so interior rings
//! cut holes. Rasterization tests each pixel center and later polygons
//! overwrite earlier ones.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::GeoTransform;
use crate::grid::{Raster, Samples, NODATA_LABEL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelPolygon {
    pub class: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Rings as `[x, y]` vertex lists. The closing edge is implicit; a
    /// repeated first vertex is tolerated.
    pub rings: Vec<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolygonFile {
    pub polygons: Vec<LabelPolygon>,
}

impl LabelPolygon {
    pub fn validate(&self) -> Result<()> {
        if self.rings.is_empty() {
            return Err(Error::DegenerateRing {
                reason: "polygon has no rings".into(),
            });
        }
        for ring in &self.rings {
            if ring.len() < 3 {
                return Err(Error::DegenerateRing {
                    reason: format!("ring has {} vertices, need at least 3", ring.len()),
                });
            }
            for v in ring {
                if !v[0].is_finite() || !v[1].is_finite() {
                    return Err(Error::DegenerateRing {
                        reason: "ring vertex is not finite".into(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Even-odd containment over all rings.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let mut inside = false;
        for ring in &self.rings {
            if point_in_ring(ring, x, y) {
                inside = !inside;
            }
        }
        inside
    }

    /// Axis-aligned bounds over every ring vertex, `(min_x, min_y, max_x, max_y)`.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        let mut b = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for ring in &self.rings {
            for v in ring {
                b.0 = b.0.min(v[0]);
                b.1 = b.1.min(v[1]);
                b.2 = b.2.max(v[0]);
                b.3 = b.3.max(v[1]);
            }
        }
        b
    }
}

/// Standard crossing-number parity test against one ring.
pub fn point_in_ring(ring: &[[f64; 2]], x: f64, y: f64) -> bool {
    let n = ring.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = (ring[i][0], ring[i][1]);
        let (xj, yj) = (ring[j][0], ring[j][1]);
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

pub fn read_polygons(path: impl AsRef<Path>) -> Result<Vec<LabelPolygon>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::IoFailure {
        path: path.to_path_buf(),
        source: e,
    })?;
    let parsed: PolygonFile =
        serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::PolygonJson {
            path: path.to_path_buf(),
            source: e,
        })?;
    for p in &parsed.polygons {
        p.validate()?;
    }
    Ok(parsed.polygons)
}

pub fn write_polygons(polygons: &[LabelPolygon], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ioe = |e| Error::IoFailure {
        path: path.to_path_buf(),
        source: e,
    };
    let file = File::create(path).map_err(ioe)?;
    let mut w = BufWriter::new(file);
    let doc = PolygonFile {
        polygons: polygons.to_vec(),
    };
    serde_json::to_writer_pretty(&mut w, &doc).map_err(|e| Error::PolygonJson {
        path: path.to_path_buf(),
        source: e,
    })?;
    w.write_all(b"\n").map_err(ioe)?;
    w.flush().map_err(ioe)
}

/// Pixel rows/cols whose centers can fall inside `bounds`, clipped to the
/// grid. Returns `None` when the box misses the grid entirely.
fn pixel_window(
    bounds: (f64, f64, f64, f64),
    width: usize,
    height: usize,
    geo: &GeoTransform,
) -> Option<(usize, usize, usize, usize)> {
    let (c0, r0) = geo.world_to_pixel(bounds.0, bounds.3); // min_x, max_y: top-left
    let (c1, r1) = geo.world_to_pixel(bounds.2, bounds.1); // max_x, min_y: bottom-right
    let col_lo = c0.floor().max(0.0) as isize;
    let row_lo = r0.floor().max(0.0) as isize;
    let col_hi = c1.ceil().min(width as f64) as isize;
    let row_hi = r1.ceil().min(height as f64) as isize;
    if col_lo >= col_hi || row_lo >= row_hi {
        return None;
    }
    Some((col_lo as usize, row_lo as usize, col_hi as usize, row_hi as usize))
}

/// Burn class labels into a fresh u8 raster. Background stays at the
/// label nodata value; overlapping polygons resolve to the last one.
pub fn rasterize_polygons(
    polygons: &[LabelPolygon],
    width: usize,
    height: usize,
    geo: GeoTransform,
) -> Result<Raster> {
    let mut data = vec![NODATA_LABEL; width * height];
    for poly in polygons {
        poly.validate()?;
        if poly.class == NODATA_LABEL {
            return Err(Error::InvalidClass(poly.class));
        }
        burn(poly, poly.class, &mut data, width, height, &geo);
    }
    Raster::new(width, height, 1, f64::from(NODATA_LABEL), geo, Samples::U8(data))
}

/// Boolean coverage of a single polygon on the grid, row-major.
pub fn polygon_mask(
    poly: &LabelPolygon,
    width: usize,
    height: usize,
    geo: &GeoTransform,
) -> Result<Vec<bool>> {
    poly.validate()?;
    let mut mask = vec![false; width * height];
    let Some((c0, r0, c1, r1)) = pixel_window(poly.bounds(), width, height, geo) else {
        return Ok(mask);
    };
    for row in r0..r1 {
        for col in c0..c1 {
            let (x, y) = geo.cell_center(col, row);
            if poly.contains(x, y) {
                mask[row * width + col] = true;
            }
        }
    }
    Ok(mask)
}

fn burn(
    poly: &LabelPolygon,
    value: u8,
    data: &mut [u8],
    width: usize,
    height: usize,
    geo: &GeoTransform,
) {
    let Some((c0, r0, c1, r1)) = pixel_window(poly.bounds(), width, height, geo) else {
        return;
    };
    for row in r0..r1 {
        for col in c0..c1 {
            let (x, y) = geo.cell_center(col, row);
            if poly.contains(x, y) {
                data[row * width + col] = value;
            }
        }
    }
}
