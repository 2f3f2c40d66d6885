//! Spatial train/validation split.
//!
//! Random pixel-level splits leak texture between train and validation
//! when neighbouring pixels land on opposite sides. Instead the grid is
//! tiled into square blocks and whole blocks are held out, so validation
//! pixels are spatially separated from training ones.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geo::GeoTransform;
use crate::grid::{Raster, Samples, NODATA_LABEL};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    /// Not used by either side: unlabeled ground outside held-out blocks.
    None,
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMask {
    width: usize,
    height: usize,
    cells: Vec<Split>,
}

impl SplitMask {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, row: usize, col: usize) -> Split {
        self.cells[row * self.width + col]
    }

    pub fn cells(&self) -> &[Split] {
        &self.cells
    }

    pub fn count(&self, split: Split) -> usize {
        self.cells.iter().filter(|&&s| s == split).count()
    }

    /// Persistable form: single-band u8 raster, 0 = none, 1 = train,
    /// 2 = val. Inverse of [`SplitMask::from_raster`].
    pub fn to_raster(&self, geo: GeoTransform) -> Raster {
        let data: Vec<u8> = self
            .cells
            .iter()
            .map(|s| match s {
                Split::None => 0,
                Split::Train => 1,
                Split::Val => 2,
            })
            .collect();
        Raster::new(
            self.width,
            self.height,
            1,
            f64::from(NODATA_LABEL),
            geo,
            Samples::U8(data),
        )
        .expect("split raster dims are the mask dims")
    }

    /// Rebuilds a mask from its raster form; codes other than 0, 1, 2
    /// are rejected.
    pub fn from_raster(raster: &Raster) -> Result<Self> {
        if raster.bands() != 1 {
            return Err(Error::InvalidArgument(format!(
                "split raster must have 1 band, got {}",
                raster.bands()
            )));
        }
        let mut cells = Vec::with_capacity(raster.width() * raster.height());
        for &code in raster.band_u8(0) {
            cells.push(match code {
                0 => Split::None,
                1 => Split::Train,
                2 => Split::Val,
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "split raster holds unknown code {other}"
                    )))
                }
            });
        }
        Ok(Self {
            width: raster.width(),
            height: raster.height(),
            cells,
        })
    }
}

/// Partition a label raster into train and held-out blocks.
///
/// Blocks of `block` x `block` pixels that contain at least one labeled
/// pixel are shuffled with a seeded generator, then taken in order until
/// the held-out share of labeled pixels first reaches `val_fraction`.
/// Chosen blocks are marked [`Split::Val`] wall to wall (labeled or not),
/// which keeps training patches from overlapping held-out ground. Labeled
/// pixels elsewhere become [`Split::Train`]; everything else stays
/// [`Split::None`].
pub fn spatial_block_split(
    labels: &Raster,
    block: usize,
    val_fraction: f64,
    seed: u64,
) -> Result<SplitMask> {
    if labels.bands() != 1 {
        return Err(Error::InvalidArgument(format!(
            "label raster must have 1 band, got {}",
            labels.bands()
        )));
    }
    if block == 0 {
        return Err(Error::InvalidArgument("block size must be positive".into()));
    }
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::InvalidArgument(format!(
            "val_fraction must be in [0, 1), got {val_fraction}"
        )));
    }

    let (w, h) = (labels.width(), labels.height());
    let lab = labels.band_u8(0);
    let bw = w.div_ceil(block);
    let bh = h.div_ceil(block);

    // Labeled-pixel count per block, row-major over the block grid.
    let mut block_counts = vec![0usize; bw * bh];
    let mut total_labeled = 0usize;
    for row in 0..h {
        for col in 0..w {
            if lab[row * w + col] != NODATA_LABEL {
                block_counts[(row / block) * bw + (col / block)] += 1;
                total_labeled += 1;
            }
        }
    }
    if total_labeled == 0 {
        return Err(Error::NoLabeledPixels);
    }

    let mut candidates: Vec<usize> = (0..bw * bh).filter(|&b| block_counts[b] > 0).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    candidates.shuffle(&mut rng);

    let mut val_blocks = vec![false; bw * bh];
    let mut held = 0usize;
    for &b in &candidates {
        if held as f64 >= val_fraction * total_labeled as f64 {
            break;
        }
        val_blocks[b] = true;
        held += block_counts[b];
    }

    let mut cells = vec![Split::None; w * h];
    for row in 0..h {
        for col in 0..w {
            let i = row * w + col;
            if val_blocks[(row / block) * bw + (col / block)] {
                cells[i] = Split::Val;
            } else if lab[i] != NODATA_LABEL {
                cells[i] = Split::Train;
            }
        }
    }
    Ok(SplitMask {
        width: w,
        height: h,
        cells,
    })
}
