//! Whole-scene inference: standardization, halo tiling and the
//! per-scene prediction rasters.
//!
//! Tiles are processed independently with a halo of the receptive
//! field radius, so the stitched map is bitwise identical to one full
//! pass; the elementwise kernels guarantee partition independence.
//! Tiles run in parallel since they only share read-only model state.

use rayon::prelude::*;

use autodiff::tensor::Tensor;
use raster::{Raster, Samples, DEFAULT_NODATA_F32};

use crate::error::{Error, Result};
use crate::model::{HeadKind, Model};
use crate::sampling::{BandStats, Scene, HEIGHT_CEILING_M, SPECTRAL_BANDS};

/// Default tile edge for whole-scene passes.
pub const DEFAULT_TILE: usize = 128;

/// Standardized full-scene input tensor plus the per-pixel validity
/// mask (clear sky and all bands observed). Invalid pixels carry 0.
pub fn scene_input(scene: &Scene, stats: &BandStats) -> Result<(Tensor<f32>, Vec<bool>)> {
    if stats.mean.len() != SPECTRAL_BANDS {
        return Err(Error::InvalidArgument(
            "band statistics must cover all 9 spectral bands".into(),
        ));
    }
    let (w, h) = (scene.raster.width(), scene.raster.height());
    let mut valid = vec![false; w * h];
    for r in 0..h {
        for c in 0..w {
            valid[r * w + c] = scene.is_clear(r, c) && scene.is_valid(r, c);
        }
    }
    let mut data = vec![0.0f32; SPECTRAL_BANDS * w * h];
    for b in 0..SPECTRAL_BANDS {
        let band = scene.raster.band_f32(b);
        let plane = &mut data[b * w * h..(b + 1) * w * h];
        for i in 0..w * h {
            if valid[i] {
                plane[i] = stats.standardize(b, f64::from(band[i])) as f32;
            }
        }
    }
    Ok((Tensor::new(vec![1, SPECTRAL_BANDS, h, w], data)?, valid))
}

/// Normalized height tensor for injection; nodata becomes 0.
pub fn height_input(height: &Raster, width: usize, hgt: usize) -> Result<Tensor<f32>> {
    if height.width() != width || height.height() != hgt || height.bands() != 1 {
        return Err(Error::GridMismatch(
            "height raster does not match scene grid".into(),
        ));
    }
    let band = height.band_f32(0);
    let nodata = height.nodata();
    let data = band
        .iter()
        .map(|&v| {
            if f64::from(v) == nodata {
                0.0
            } else {
                crate::sampling::normalize_height(f64::from(v)) as f32
            }
        })
        .collect();
    Ok(Tensor::new(vec![1, 1, hgt, width], data)?)
}

fn crop(x: &Tensor<f32>, r0: usize, r1: usize, c0: usize, c1: usize) -> Tensor<f32> {
    let (_, ch, h, w) = x.nchw().expect("crop input is 4-d");
    debug_assert!(r1 <= h && c1 <= w);
    let (oh, ow) = (r1 - r0, c1 - c0);
    let mut data = Vec::with_capacity(ch * oh * ow);
    for b in 0..ch {
        let plane = x.plane(0, b);
        for r in r0..r1 {
            data.extend_from_slice(&plane[r * w + c0..r * w + c1]);
        }
    }
    Tensor::new(vec![1, ch, oh, ow], data).expect("crop dims consistent")
}

/// Full-image forward in tiles with a receptive-field halo. Bitwise
/// equal to `model.forward` on the whole image at once.
pub fn forward_tiled(
    model: &Model<f32>,
    x: &Tensor<f32>,
    height: Option<&Tensor<f32>>,
    tile: usize,
) -> Result<Tensor<f32>> {
    let (n, _, h, w) = x.nchw()?;
    if n != 1 {
        return Err(Error::InvalidArgument(
            "tiled forward expects a single image".into(),
        ));
    }
    if tile == 0 {
        return Err(Error::InvalidArgument("tile size must be positive".into()));
    }
    let halo = model.cfg.receptive_field();
    let mut cores = Vec::new();
    let mut r0 = 0;
    while r0 < h {
        let r1 = (r0 + tile).min(h);
        let mut c0 = 0;
        while c0 < w {
            let c1 = (c0 + tile).min(w);
            cores.push((r0, r1, c0, c1));
            c0 = c1;
        }
        r0 = r1;
    }

    let parts: Vec<(usize, usize, usize, usize, Tensor<f32>)> = cores
        .par_iter()
        .map(|&(r0, r1, c0, c1)| {
            let wr0 = r0.saturating_sub(halo);
            let wr1 = (r1 + halo).min(h);
            let wc0 = c0.saturating_sub(halo);
            let wc1 = (c1 + halo).min(w);
            let wx = crop(x, wr0, wr1, wc0, wc1);
            let wh = height.map(|hm| crop(hm, wr0, wr1, wc0, wc1));
            let y = model.forward(&wx, wh.as_ref())?;
            let core = crop(&y, r0 - wr0, r1 - wr0, c0 - wc0, c1 - wc0);
            Ok((r0, r1, c0, c1, core))
        })
        .collect::<Result<Vec<_>>>()?;

    let out_ch = model.cfg.out_channels;
    let mut out = Tensor::zeros(vec![1, out_ch, h, w]);
    for (r0, r1, c0, c1, core) in parts {
        let (cw, chh) = (c1 - c0, r1 - r0);
        for b in 0..out_ch {
            let src = core.plane(0, b);
            let dst = out.plane_mut(0, b);
            for (i, r) in (r0..r1).enumerate() {
                dst[r * w + c0..r * w + c1].copy_from_slice(&src[i * cw..(i + 1) * cw]);
            }
            debug_assert_eq!(src.len(), cw * chh);
        }
    }
    Ok(out)
}

/// Cocoa probability for one scene under one model: single-band f32
/// raster in [0,1], nodata wherever the scene pixel was cloudy or
/// unobserved.
pub fn predict_member_scene(
    model: &Model<f32>,
    scene: &Scene,
    height: Option<&Raster>,
    stats: &BandStats,
    tile: usize,
) -> Result<Raster> {
    if model.cfg.head != HeadKind::Softmax2 {
        return Err(Error::InvalidArgument(
            "scene prediction needs the two-class softmax head".into(),
        ));
    }
    let (w, h) = (scene.raster.width(), scene.raster.height());
    let (x, valid) = scene_input(scene, stats)?;
    let ht = match height {
        Some(hm) => Some(height_input(hm, w, h)?),
        None => None,
    };
    if model.cfg.use_height && ht.is_none() {
        return Err(Error::InvalidArgument(
            "model expects a height map but none was given".into(),
        ));
    }
    let y = forward_tiled(model, &x, ht.as_ref(), tile)?;
    let cocoa = y.plane(0, 1);
    let data: Vec<f32> = cocoa
        .iter()
        .zip(&valid)
        .map(|(&p, &ok)| if ok { p } else { DEFAULT_NODATA_F32 as f32 })
        .collect();
    Ok(Raster::new(
        w,
        h,
        1,
        DEFAULT_NODATA_F32,
        *scene.raster.geo(),
        Samples::F32(data),
    )?)
}

/// Dense canopy height in meters, clamped to [0, 50]; nodata where
/// the scene was cloudy or unobserved.
pub fn predict_height_map(
    model: &Model<f32>,
    scene: &Scene,
    stats: &BandStats,
    tile: usize,
) -> Result<Raster> {
    if model.cfg.head != HeadKind::Linear || model.cfg.out_channels != 1 {
        return Err(Error::InvalidArgument(
            "height prediction needs the single-channel linear head".into(),
        ));
    }
    let (w, h) = (scene.raster.width(), scene.raster.height());
    let (x, valid) = scene_input(scene, stats)?;
    let y = forward_tiled(model, &x, None, tile)?;
    let data: Vec<f32> = y
        .plane(0, 0)
        .iter()
        .zip(&valid)
        .map(|(&v, &ok)| {
            if ok {
                (f64::from(v) * HEIGHT_CEILING_M).clamp(0.0, HEIGHT_CEILING_M) as f32
            } else {
                DEFAULT_NODATA_F32 as f32
            }
        })
        .collect();
    Ok(Raster::new(
        w,
        h,
        1,
        DEFAULT_NODATA_F32,
        *scene.raster.geo(),
        Samples::F32(data),
    )?)
}
