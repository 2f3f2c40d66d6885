//! Synthetic scene generator: the desk-scale test bed every
//! end-to-end check runs against.
//!
//! Cocoa appears as low (2-8 m) rectangular blobs with their own
//! spectral signature on a tall (15-40 m) forest background, plus
//! water and bare patches, per-pixel Gaussian noise, per-scene
//! Bernoulli clouds, sparse polygon labels over a subset of blobs,
//! named zone polygons with a forest-loss raster, and a sparse
//! height-sample raster for the height regressor. Everything is
//! deterministic per seed, and blob rectangles are snapped to pixel
//! boundaries so the emitted polygons rasterize back to exactly the
//! truth mask.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use raster::{
    write_polygons, write_raster, GeoTransform, LabelPolygon, Raster, Samples,
    DEFAULT_NODATA_F32, NODATA_LABEL,
};

use crate::error::{Error, Result};
use crate::sampling::{write_stack, ObservationStack, Scene, SPECTRAL_BANDS};

/// Land-cover class codes used internally by the generator.
const FOREST: u8 = 0;
const COCOA: u8 = 1;
const WATER: u8 = 2;
const BARE: u8 = 3;

/// Reflectance written under clouds, far from every signature.
const CLOUD_LEVEL: f64 = 0.85;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSceneSpec {
    #[serde(default = "d_dim")]
    pub width: usize,
    #[serde(default = "d_dim")]
    pub height: usize,
    /// Nominal blob count; controls blob size. Blobs are added until
    /// the requested cocoa fraction is covered.
    #[serde(default = "d_blobs")]
    pub n_cocoa_blobs: usize,
    #[serde(default = "d_fraction")]
    pub cocoa_fraction: f64,
    #[serde(default = "d_cocoa_sig")]
    pub cocoa_signature: [f64; SPECTRAL_BANDS],
    #[serde(default = "d_forest_sig")]
    pub forest_signature: [f64; SPECTRAL_BANDS],
    #[serde(default = "d_water_sig")]
    pub water_signature: [f64; SPECTRAL_BANDS],
    #[serde(default = "d_bare_sig")]
    pub bare_signature: [f64; SPECTRAL_BANDS],
    #[serde(default = "d_sigma")]
    pub noise_sigma: f64,
    /// Meters; the upper bound must respect the 8 m cocoa ceiling.
    #[serde(default = "d_cocoa_h")]
    pub cocoa_height_range: (f64, f64),
    #[serde(default = "d_forest_h")]
    pub forest_height_range: (f64, f64),
    /// Per-pixel cloud probability, identical for every scene.
    #[serde(default)]
    pub cloud_fraction: f64,
    #[serde(default = "d_scenes")]
    pub scene_count: usize,
    /// Share of cocoa blobs that receive a training polygon.
    #[serde(default = "d_label_fraction")]
    pub label_fraction: f64,
    /// Share of pixels carrying a sparse height sample.
    #[serde(default = "d_density")]
    pub height_sample_density: f64,
    /// Copy the forest signature onto cocoa so the classes differ only
    /// in height; used by the height-ablation comparison.
    #[serde(default)]
    pub share_spectra: bool,
    #[serde(default)]
    pub seed: u64,
}

fn d_dim() -> usize {
    96
}
fn d_blobs() -> usize {
    8
}
fn d_fraction() -> f64 {
    0.3
}
fn d_sigma() -> f64 {
    0.01
}
fn d_cocoa_h() -> (f64, f64) {
    (2.0, 8.0)
}
fn d_forest_h() -> (f64, f64) {
    (15.0, 40.0)
}
fn d_scenes() -> usize {
    6
}
fn d_label_fraction() -> f64 {
    0.7
}
fn d_density() -> f64 {
    0.02
}
fn d_cocoa_sig() -> [f64; 9] {
    [0.09, 0.11, 0.08, 0.36, 0.33, 0.30, 0.27, 0.23, 0.20]
}
fn d_forest_sig() -> [f64; 9] {
    [0.06, 0.08, 0.05, 0.30, 0.28, 0.26, 0.24, 0.20, 0.18]
}
fn d_water_sig() -> [f64; 9] {
    [0.05, 0.06, 0.07, 0.02, 0.015, 0.012, 0.010, 0.008, 0.006]
}
fn d_bare_sig() -> [f64; 9] {
    [0.20, 0.22, 0.25, 0.30, 0.32, 0.33, 0.34, 0.30, 0.28]
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

impl SyntheticSceneSpec {
    /// Effective cocoa signature after the share-spectra switch.
    pub fn effective_cocoa_signature(&self) -> [f64; SPECTRAL_BANDS] {
        if self.share_spectra {
            self.forest_signature
        } else {
            self.cocoa_signature
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 32 || self.height < 32 {
            return Err(Error::InvalidArgument(
                "synthetic grid must be at least 32x32".into(),
            ));
        }
        if self.n_cocoa_blobs == 0 || self.scene_count == 0 {
            return Err(Error::InvalidArgument(
                "blob and scene counts must be positive".into(),
            ));
        }
        if !(0.01..=0.8).contains(&self.cocoa_fraction) {
            return Err(Error::InvalidArgument(
                "cocoa fraction must be in [0.01, 0.8]".into(),
            ));
        }
        for f in [
            self.cloud_fraction,
            self.label_fraction,
            self.height_sample_density,
        ] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::InvalidArgument(
                    "fractions must be in [0, 1]".into(),
                ));
            }
        }
        if self.noise_sigma <= 0.0 {
            return Err(Error::InvalidArgument("noise sigma must be positive".into()));
        }
        let (cl, ch) = self.cocoa_height_range;
        let (fl, fh) = self.forest_height_range;
        if !(cl < ch && fl < fh && cl >= 0.0) {
            return Err(Error::InvalidArgument("height ranges must be ordered".into()));
        }
        if ch > 8.0 {
            return Err(Error::InvalidArgument(
                "cocoa height ceiling is 8 m".into(),
            ));
        }
        if !self.share_spectra {
            let cocoa = self.effective_cocoa_signature();
            let distinct = (0..SPECTRAL_BANDS).any(|b| {
                (cocoa[b] - self.forest_signature[b]).abs() >= 3.0 * self.noise_sigma
            });
            if !distinct {
                return Err(Error::InvalidArgument(
                    "cocoa and forest signatures must differ by >= 3 sigma in some band".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Generator output: the scene stack plus every ground-truth artifact
/// the acceptance checks compare against.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub stack: ObservationStack,
    /// Sparse training labels: class-0 background and class-1 cocoa
    /// rectangles, pixel-snapped.
    pub labels: Vec<LabelPolygon>,
    /// Field sites with a ground class for polygon-level evaluation.
    pub sites: Vec<LabelPolygon>,
    /// Named protected-area polygons.
    pub zones: Vec<LabelPolygon>,
    /// u8, 1 = cocoa, 0 = everything else; complete (no nodata).
    pub truth_mask: Raster,
    /// f32 meters, complete.
    pub height_true: Raster,
    /// f32 meters with nodata everywhere except sampled pixels.
    pub height_samples: Raster,
    /// u8, 1 = forest loss since 2000.
    pub forest_loss: Raster,
    /// Measured share of cocoa pixels in the truth mask.
    pub cocoa_fraction: f64,
}

fn grid_geo() -> GeoTransform {
    GeoTransform {
        origin_x: 500_000.0,
        origin_y: 700_000.0,
        pixel_size_x: 10.0,
        pixel_size_y: -10.0,
    }
}

/// Polygon for the pixel rectangle rows [r0, r0+h) x cols [c0, c0+w),
/// with vertices on pixel boundaries so rasterization is exact.
pub fn rect_polygon(
    geo: &GeoTransform,
    r0: usize,
    c0: usize,
    h: usize,
    w: usize,
    class: u8,
    name: Option<String>,
) -> LabelPolygon {
    let x0 = geo.origin_x + c0 as f64 * geo.pixel_size_x;
    let x1 = geo.origin_x + (c0 + w) as f64 * geo.pixel_size_x;
    let y_top = geo.origin_y + r0 as f64 * geo.pixel_size_y;
    let y_bot = geo.origin_y + (r0 + h) as f64 * geo.pixel_size_y;
    LabelPolygon {
        class,
        name,
        rings: vec![vec![[x0, y_bot], [x1, y_bot], [x1, y_top], [x0, y_top]]],
    }
}

struct Rect {
    r0: usize,
    c0: usize,
    h: usize,
    w: usize,
}

fn draw_rect(rng: &mut ChaCha8Rng, grid_w: usize, grid_h: usize, side: f64) -> Rect {
    let w = ((side * rng.gen_range(0.7..1.4)).round() as usize).clamp(2, grid_w / 2);
    let h = ((side * rng.gen_range(0.7..1.4)).round() as usize).clamp(2, grid_h / 2);
    Rect {
        r0: rng.gen_range(0..=grid_h - h),
        c0: rng.gen_range(0..=grid_w - w),
        h,
        w,
    }
}

pub fn generate(spec: &SyntheticSceneSpec) -> Result<SyntheticScene> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let geo = grid_geo();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // Land cover: forest base, a water body and a bare patch, then
    // cocoa blobs painted last so they always win.
    let mut class = vec![FOREST; w * h];
    for (code, side) in [(WATER, (w.min(h) / 6) as f64), (BARE, (w.min(h) / 7) as f64)] {
        let r = draw_rect(&mut rng, w, h, side);
        for rr in r.r0..r.r0 + r.h {
            for cc in r.c0..r.c0 + r.w {
                class[rr * w + cc] = code;
            }
        }
    }

    let target = (spec.cocoa_fraction * (w * h) as f64).round() as usize;
    let blob_side = ((target as f64 / spec.n_cocoa_blobs as f64).sqrt()).max(2.0);
    let mut blobs: Vec<Rect> = Vec::new();
    let mut covered = 0usize;
    let max_attempts = 50 * spec.n_cocoa_blobs;
    for _ in 0..max_attempts {
        if covered >= target {
            break;
        }
        let r = draw_rect(&mut rng, w, h, blob_side);
        for rr in r.r0..r.r0 + r.h {
            for cc in r.c0..r.c0 + r.w {
                if class[rr * w + cc] != COCOA {
                    class[rr * w + cc] = COCOA;
                    covered += 1;
                }
            }
        }
        blobs.push(r);
    }

    // Heights: per-pixel uniform in the class range, zero elsewhere.
    let (cl, ch) = spec.cocoa_height_range;
    let (fl, fh) = spec.forest_height_range;
    let height_true: Vec<f32> = class
        .iter()
        .map(|&k| match k {
            COCOA => rng.gen_range(cl..ch) as f32,
            FOREST => rng.gen_range(fl..fh) as f32,
            _ => 0.0,
        })
        .collect();

    // Sparse height samples with light measurement noise.
    let sample_noise = Normal::new(0.0, 0.5).expect("noise");
    let height_samples: Vec<f32> = height_true
        .iter()
        .map(|&v| {
            if rng.gen_bool(spec.height_sample_density) {
                (f64::from(v) + sample_noise.sample(&mut rng)).max(0.0) as f32
            } else {
                DEFAULT_NODATA_F32 as f32
            }
        })
        .collect();

    // Scenes: signature + noise, clouds overwrite with a bright level.
    let signatures: [[f64; SPECTRAL_BANDS]; 4] = [
        spec.forest_signature,
        spec.effective_cocoa_signature(),
        spec.water_signature,
        spec.bare_signature,
    ];
    let noise = Normal::new(0.0, spec.noise_sigma).expect("sigma checked");
    let mut scenes = Vec::with_capacity(spec.scene_count);
    for s in 0..spec.scene_count {
        let brightness = rng.gen_range(-0.01..0.01);
        let cloudy: Vec<bool> = (0..w * h)
            .map(|_| spec.cloud_fraction > 0.0 && rng.gen_bool(spec.cloud_fraction))
            .collect();
        let mut data = Vec::with_capacity((SPECTRAL_BANDS + 1) * w * h);
        for band in 0..SPECTRAL_BANDS {
            for px in 0..w * h {
                let base = if cloudy[px] {
                    CLOUD_LEVEL
                } else {
                    signatures[class[px] as usize][band] + brightness
                };
                data.push((base + noise.sample(&mut rng)) as f32);
            }
        }
        data.extend(cloudy.iter().map(|&c| if c { 1.0f32 } else { 0.0 }));
        let raster = Raster::new(w, h, SPECTRAL_BANDS + 1, DEFAULT_NODATA_F32, geo.clone(), Samples::F32(data))?;
        let cf = Scene::measured_cloud_fraction(&raster);
        scenes.push(Scene::new(raster, 91 * s as i64, cf)?);
    }
    let stack = ObservationStack::new(format!("synthetic-{}", spec.seed), scenes)?;

    // Training labels: background rectangles first (rejected if they
    // touch cocoa), then polygons over the labeled subset of blobs.
    let mut labels: Vec<LabelPolygon> = Vec::new();
    let n_bg = (spec.n_cocoa_blobs * 2).max(4);
    let mut placed = 0;
    let mut tries = 0;
    while placed < n_bg && tries < 100 * n_bg {
        tries += 1;
        let r = draw_rect(&mut rng, w, h, blob_side);
        let clean = (r.r0..r.r0 + r.h)
            .all(|rr| (r.c0..r.c0 + r.w).all(|cc| class[rr * w + cc] != COCOA));
        if clean {
            labels.push(rect_polygon(&geo, r.r0, r.c0, r.h, r.w, 0, None));
            placed += 1;
        }
    }
    for b in &blobs {
        if rng.gen_bool(spec.label_fraction) {
            labels.push(rect_polygon(&geo, b.r0, b.c0, b.h, b.w, 1, None));
        }
    }

    // Field sites: small rectangles of a single ground class.
    let mut sites: Vec<LabelPolygon> = Vec::new();
    for wanted in [1u8, 0u8] {
        let mut found = 0;
        let mut tries = 0;
        while found < 10 && tries < 2000 {
            tries += 1;
            let side = rng.gen_range(3..6);
            if side > w || side > h {
                continue;
            }
            let r0 = rng.gen_range(0..=h - side);
            let c0 = rng.gen_range(0..=w - side);
            let pure = (r0..r0 + side).all(|rr| {
                (c0..c0 + side).all(|cc| (class[rr * w + cc] == COCOA) == (wanted == 1))
            });
            if pure {
                sites.push(rect_polygon(&geo, r0, c0, side, side, wanted, None));
                found += 1;
            }
        }
    }

    // Three fixed protected areas spanning different grid thirds.
    let zones = vec![
        rect_polygon(&geo, 0, 0, h / 3, w / 2, 0, Some("Reserve A".into())),
        rect_polygon(&geo, h / 3, w / 4, h / 3, w / 2, 0, Some("Reserve B".into())),
        rect_polygon(&geo, 2 * h / 3, w / 2, h - 2 * h / 3, w - w / 2, 0, Some("Park C".into())),
    ];

    // Forest loss: a few random patches, wherever they land.
    let mut loss = vec![0u8; w * h];
    for _ in 0..4 {
        let r = draw_rect(&mut rng, w, h, (w.min(h) / 8) as f64);
        for rr in r.r0..r.r0 + r.h {
            for cc in r.c0..r.c0 + r.w {
                loss[rr * w + cc] = 1;
            }
        }
    }

    let truth: Vec<u8> = class.iter().map(|&k| u8::from(k == COCOA)).collect();
    let cocoa_fraction =
        truth.iter().filter(|&&v| v == 1).count() as f64 / (w * h) as f64;

    Ok(SyntheticScene {
        stack,
        labels,
        sites,
        zones,
        truth_mask: Raster::new(w, h, 1, f64::from(NODATA_LABEL), geo.clone(), Samples::U8(truth))?,
        height_true: Raster::new(w, h, 1, DEFAULT_NODATA_F32, geo.clone(), Samples::F32(height_true))?,
        height_samples: Raster::new(w, h, 1, DEFAULT_NODATA_F32, geo.clone(), Samples::F32(height_samples))?,
        forest_loss: Raster::new(w, h, 1, f64::from(NODATA_LABEL), geo, Samples::U8(loss))?,
        cocoa_fraction,
    })
}

/// Lay the generated artifacts out on disk:
/// `scenes/` (stack + manifest), `labels.json`, `sites.json`,
/// `zones.json`, `truth_mask.cras`, `height_true.cras`,
/// `height_samples.cras`, `forest_loss.cras` and `spec.json`.
pub fn write_synthetic(
    dir: impl AsRef<Path>,
    spec: &SyntheticSceneSpec,
    scene: &SyntheticScene,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::IoFailure {
        path: dir.to_path_buf(),
        source: e,
    })?;
    write_stack(dir.join("scenes"), &scene.stack)?;
    for (name, polys) in [
        ("labels.json", &scene.labels),
        ("sites.json", &scene.sites),
        ("zones.json", &scene.zones),
    ] {
        write_polygons(polys, dir.join(name))?;
    }
    write_raster(&scene.truth_mask, dir.join("truth_mask.cras"))?;
    write_raster(&scene.height_true, dir.join("height_true.cras"))?;
    write_raster(&scene.height_samples, dir.join("height_samples.cras"))?;
    write_raster(&scene.forest_loss, dir.join("forest_loss.cras"))?;
    let path = dir.join("spec.json");
    let mut text = serde_json::to_string_pretty(spec).map_err(|e| Error::Json {
        path: path.clone(),
        source: e,
    })?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::IoFailure { path, source: e })
}

#[cfg(test)]
mod tests {
    use super::*;
    use raster::rasterize_polygons;

    #[test]
    fn default_spec_validates_and_generates() {
        let spec = SyntheticSceneSpec::default();
        let scene = generate(&spec).unwrap();
        assert_eq!(scene.stack.scenes.len(), 6);
        assert_eq!(scene.truth_mask.width(), 96);
        assert!(!scene.labels.is_empty());
        assert_eq!(scene.zones.len(), 3);
    }

    #[test]
    fn cocoa_fraction_near_request() {
        for seed in [1, 2, 3] {
            let spec = SyntheticSceneSpec {
                seed,
                ..SyntheticSceneSpec::default()
            };
            let scene = generate(&spec).unwrap();
            assert!(
                (scene.cocoa_fraction - 0.3).abs() <= 0.05,
                "seed {seed}: fraction {}",
                scene.cocoa_fraction
            );
        }
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let spec = SyntheticSceneSpec::default();
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.truth_mask, b.truth_mask);
        assert_eq!(a.height_true, b.height_true);
        assert_eq!(
            a.stack.scenes[0].raster.band_f32(0),
            b.stack.scenes[0].raster.band_f32(0)
        );
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn label_polygons_rasterize_onto_truth() {
        let spec = SyntheticSceneSpec::default();
        let scene = generate(&spec).unwrap();
        let grid = rasterize_polygons(
            &scene.labels,
            spec.width,
            spec.height,
            *scene.truth_mask.geo(),
        )
        .unwrap();
        let labels = grid.band_u8(0);
        let truth = scene.truth_mask.band_u8(0);
        let mut labeled = 0;
        for i in 0..labels.len() {
            if labels[i] != NODATA_LABEL {
                labeled += 1;
                assert_eq!(labels[i], truth[i], "label disagrees with truth at {i}");
            }
        }
        // Sparse but substantial labeling.
        assert!(labeled > spec.width * spec.height / 20);
        assert!(labeled < spec.width * spec.height);
    }

    #[test]
    fn heights_respect_class_ranges() {
        let spec = SyntheticSceneSpec::default();
        let scene = generate(&spec).unwrap();
        let truth = scene.truth_mask.band_u8(0);
        let heights = scene.height_true.band_f32(0);
        for i in 0..truth.len() {
            if truth[i] == 1 {
                assert!((2.0..=8.0).contains(&heights[i]), "cocoa height {}", heights[i]);
            }
        }
        let max = heights.iter().cloned().fold(0.0f32, f32::max);
        assert!(max <= 40.0);
    }

    #[test]
    fn cloud_saturation_flags_every_pixel() {
        let spec = SyntheticSceneSpec {
            cloud_fraction: 1.0,
            scene_count: 2,
            ..SyntheticSceneSpec::default()
        };
        let scene = generate(&spec).unwrap();
        for s in &scene.stack.scenes {
            assert_eq!(s.cloud_fraction, 1.0);
            assert!(s.raster.band_f32(9).iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn clear_sky_keeps_zero_cloud_fraction() {
        let spec = SyntheticSceneSpec::default();
        let scene = generate(&spec).unwrap();
        for s in &scene.stack.scenes {
            assert_eq!(s.cloud_fraction, 0.0);
        }
    }

    #[test]
    fn height_sample_density_close_to_request() {
        let spec = SyntheticSceneSpec::default();
        let scene = generate(&spec).unwrap();
        let nd = DEFAULT_NODATA_F32 as f32;
        let n = scene
            .height_samples
            .band_f32(0)
            .iter()
            .filter(|&&v| v != nd)
            .count();
        let density = n as f64 / (spec.width * spec.height) as f64;
        assert!((density - 0.02).abs() < 0.01, "density {density}");
    }

    #[test]
    fn shared_spectra_flag_copies_forest_signature() {
        let spec = SyntheticSceneSpec {
            share_spectra: true,
            ..SyntheticSceneSpec::default()
        };
        assert_eq!(spec.effective_cocoa_signature(), spec.forest_signature);
        spec.validate().unwrap();
        // Distinctness is required only when spectra are not shared.
        let bad = SyntheticSceneSpec {
            cocoa_signature: d_forest_sig(),
            ..SyntheticSceneSpec::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = SyntheticSceneSpec::default();
        spec.cocoa_height_range = (2.0, 9.0);
        assert!(spec.validate().is_err());
        let mut spec = SyntheticSceneSpec::default();
        spec.width = 16;
        assert!(spec.validate().is_err());
        let mut spec = SyntheticSceneSpec::default();
        spec.cloud_fraction = 1.5;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn sites_are_pure_and_balanced() {
        let spec = SyntheticSceneSpec::default();
        let scene = generate(&spec).unwrap();
        let truth = scene.truth_mask.band_u8(0);
        let geo = scene.truth_mask.geo();
        let cocoa_sites = scene.sites.iter().filter(|s| s.class == 1).count();
        assert!(cocoa_sites >= 5);
        assert!(scene.sites.len() - cocoa_sites >= 5);
        for site in &scene.sites {
            let mask =
                raster::polygon_mask(site, spec.width, spec.height, geo).unwrap();
            for (i, &inside) in mask.iter().enumerate() {
                if inside {
                    assert_eq!(truth[i], site.class);
                }
            }
        }
    }

    #[test]
    fn write_layout_is_complete() {
        let dir = std::env::temp_dir().join("pipeline-synth-write");
        let _ = std::fs::remove_dir_all(&dir);
        let spec = SyntheticSceneSpec {
            width: 48,
            height: 48,
            scene_count: 2,
            ..SyntheticSceneSpec::default()
        };
        let scene = generate(&spec).unwrap();
        write_synthetic(&dir, &spec, &scene).unwrap();
        for f in [
            "scenes/manifest.json",
            "scenes/scene_0.cras",
            "scenes/scene_91.cras",
            "labels.json",
            "sites.json",
            "zones.json",
            "truth_mask.cras",
            "height_true.cras",
            "height_samples.cras",
            "forest_loss.cras",
            "spec.json",
        ] {
            assert!(dir.join(f).exists(), "{f} missing");
        }
    }
}
