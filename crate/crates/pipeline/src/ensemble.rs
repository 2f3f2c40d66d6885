//! Independent model replicas and the reduction of their per-scene
//! probability maps into a single confidence raster.
//!
//! Each member gets its own seed for both initialization and batch
//! order. Aggregation is an unweighted masked mean whose summation
//! order is fixed by (member index, scene timestamp), so the result
//! does not depend on input order or completion order.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use raster::{Raster, Samples, Split, SplitMask, NODATA_LABEL};

use crate::error::{Error, Result};
use crate::infer::predict_member_scene;
use crate::model::{load_model, save_model, CheckpointMeta, Model, ModelConfig};
use crate::sampling::{BandStats, PatchSampler, Scene};
use crate::train::{train_segmentation, TrainLogEntry, TrainSchedule};

/// Replica count used when a config does not say otherwise.
pub const DEFAULT_ENSEMBLE_SIZE: usize = 10;

/// Pixels with fewer contributing predictions than this become nodata
/// in the aggregate (the default keeps every observed pixel).
pub const DEFAULT_MIN_CONTRIBUTORS: usize = 1;

/// Mixed into a member's seed for its batch sampler so parameter init
/// and batch order draw from unrelated streams.
const SAMPLER_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// A set of independently trained replicas of one model config.
pub struct Ensemble {
    pub members: Vec<Model<f32>>,
    pub seeds: Vec<u64>,
}

/// On-disk index of a saved ensemble: member checkpoint files
/// (relative to the manifest directory) and their seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub seeds: Vec<u64>,
    pub members: Vec<String>,
}

fn check_seeds(seeds: &[u64]) -> Result<()> {
    if seeds.is_empty() {
        return Err(Error::EmptyInput("member seeds"));
    }
    let mut sorted = seeds.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument(
            "member seeds must be pairwise distinct".into(),
        ));
    }
    Ok(())
}

/// Trains one replica per seed; every member sees the same data but
/// draws its own initialization and batch sequence. Returns the
/// ensemble plus each member's loss curve.
#[allow(clippy::too_many_arguments)]
pub fn train_ensemble(
    base: &ModelConfig,
    seeds: &[u64],
    scenes: &[Scene],
    labels: &Raster,
    height: Option<&Raster>,
    stats: &BandStats,
    split: &SplitMask,
    schedule: &TrainSchedule,
    dice_epsilon: f64,
) -> Result<(Ensemble, Vec<Vec<TrainLogEntry>>)> {
    check_seeds(seeds)?;
    let mut members = Vec::with_capacity(seeds.len());
    let mut curves = Vec::with_capacity(seeds.len());
    for (index, &seed) in seeds.iter().enumerate() {
        let run = || -> Result<(Model<f32>, Vec<TrainLogEntry>)> {
            let cfg = ModelConfig { seed, ..base.clone() };
            let mut model: Model<f32> = Model::build(&cfg)?;
            let mut sampler = PatchSampler::new(
                scenes,
                labels,
                height,
                stats,
                split,
                Split::Train,
                crate::sampling::PATCH_SIZE,
                seed ^ SAMPLER_SEED_SALT,
            )?;
            let curve =
                train_segmentation(&mut model, &mut sampler, schedule, dice_epsilon, None, None)?;
            Ok((model, curve))
        };
        let (model, curve) = run().map_err(|e| Error::Member {
            index,
            source: Box::new(e),
        })?;
        members.push(model);
        curves.push(curve);
    }
    Ok((Ensemble { members, seeds: seeds.to_vec() }, curves))
}

/// One member's probability map for one scene; the key fixes the
/// canonical summation order during aggregation.
pub struct MemberPrediction {
    pub member: usize,
    pub timestamp: i64,
    pub map: Raster,
}

/// Runs every member over every scene.
pub fn predict_ensemble(
    ensemble: &Ensemble,
    scenes: &[Scene],
    height: Option<&Raster>,
    stats: &BandStats,
    tile: usize,
) -> Result<Vec<MemberPrediction>> {
    let mut preds = Vec::with_capacity(ensemble.members.len() * scenes.len());
    for (member, model) in ensemble.members.iter().enumerate() {
        for scene in scenes {
            let map = predict_member_scene(model, scene, height, stats, tile)?;
            preds.push(MemberPrediction {
                member,
                timestamp: scene.timestamp,
                map,
            });
        }
    }
    Ok(preds)
}

/// Aggregated cocoa confidence: band 0 is the masked mean of all
/// contributing predictions, band 1 the contributor count per pixel.
pub struct ConfidenceMap {
    raster: Raster,
}

impl ConfidenceMap {
    /// Wraps a two-band f32 raster (confidence, contributor count).
    pub fn from_raster(raster: Raster) -> Result<Self> {
        if raster.bands() != 2 {
            return Err(Error::InvalidArgument(format!(
                "confidence map needs bands (confidence, contributors), got {} bands",
                raster.bands()
            )));
        }
        let nodata = raster.nodata();
        for (&v, &n) in raster.band_f32(0).iter().zip(raster.band_f32(1)) {
            if f64::from(v) == nodata {
                continue;
            }
            if !(0.0..=1.0).contains(&v) || n < 1.0 {
                return Err(Error::InvalidArgument(format!(
                    "confidence {v} with {n} contributors is out of range"
                )));
            }
        }
        Ok(Self { raster })
    }

    pub fn raster(&self) -> &Raster {
        &self.raster
    }

    pub fn into_raster(self) -> Raster {
        self.raster
    }

    /// Mean confidence band; nodata where too few contributors.
    pub fn confidence(&self) -> &[f32] {
        self.raster.band_f32(0)
    }

    /// Contributor count band (recorded even below the minimum).
    pub fn contributors(&self) -> &[f32] {
        self.raster.band_f32(1)
    }

    pub fn nodata(&self) -> f64 {
        self.raster.nodata()
    }

    pub fn is_nodata(&self, index: usize) -> bool {
        f64::from(self.confidence()[index]) == self.raster.nodata()
    }
}

/// Masked per-pixel mean over all predictions. Contributors are
/// summed in (member index, scene timestamp) order; pixels with fewer
/// than `min_contributors` valid values become nodata.
pub fn aggregate_confidence(
    preds: &[MemberPrediction],
    min_contributors: usize,
) -> Result<ConfidenceMap> {
    if preds.is_empty() {
        return Err(Error::EmptyInput("predictions"));
    }
    let min_contributors = min_contributors.max(1);
    let first = &preds[0].map;
    for p in preds {
        if p.map.bands() != 1 {
            return Err(Error::InvalidArgument(
                "member predictions must be single-band probability rasters".into(),
            ));
        }
        if !p.map.same_grid(first) {
            return Err(Error::GridMismatch(
                "member predictions cover different grids".into(),
            ));
        }
    }
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by_key(|&i| (preds[i].member, preds[i].timestamp));
    let sources: Vec<(&[f32], f64)> = order
        .iter()
        .map(|&i| (preds[i].map.band_f32(0), preds[i].map.nodata()))
        .collect();

    let len = first.plane_len();
    let nodata = first.nodata();
    let mut conf = vec![nodata as f32; len];
    let mut count = vec![0.0f32; len];
    for px in 0..len {
        let mut sum = 0.0f64;
        let mut n = 0usize;
        for &(band, src_nodata) in &sources {
            let v = band[px];
            if f64::from(v) == src_nodata {
                continue;
            }
            sum += f64::from(v);
            n += 1;
        }
        count[px] = n as f32;
        if n >= min_contributors {
            conf[px] = (sum / n as f64) as f32;
        }
    }
    let mut samples = conf;
    samples.extend_from_slice(&count);
    ConfidenceMap::from_raster(Raster::new(
        first.width(),
        first.height(),
        2,
        nodata,
        *first.geo(),
        Samples::F32(samples),
    )?)
}

/// Binary cocoa map: 1 where confidence strictly exceeds `t`, 0 where
/// it does not, 255 where the confidence is nodata. The comparison is
/// done in f32, matching how calibration counts pixels, so a stored
/// value equal to the threshold never lands on the wrong side.
pub fn threshold_map(conf: &ConfidenceMap, t: f64) -> Result<Raster> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!(
            "threshold {t} outside [0, 1]"
        )));
    }
    let src = conf.raster();
    let t32 = t as f32;
    let data: Vec<u8> = conf
        .confidence()
        .iter()
        .map(|&v| {
            if f64::from(v) == src.nodata() {
                NODATA_LABEL
            } else if v > t32 {
                1
            } else {
                0
            }
        })
        .collect();
    Ok(Raster::new(
        src.width(),
        src.height(),
        1,
        f64::from(NODATA_LABEL),
        *src.geo(),
        Samples::U8(data),
    )?)
}

/// Saves member checkpoints plus `ensemble.json` into `dir`.
pub fn write_ensemble(
    dir: &Path,
    ensemble: &mut Ensemble,
    band_stats: Option<&BandStats>,
) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|source| Error::IoFailure {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut names = Vec::with_capacity(ensemble.members.len());
    for (i, model) in ensemble.members.iter_mut().enumerate() {
        let name = format!("member_{i:02}.ckpt");
        let meta = CheckpointMeta {
            config: model.cfg.clone(),
            band_stats: band_stats.cloned(),
        };
        save_model(&dir.join(&name), model, &meta)?;
        names.push(name);
    }
    let manifest = EnsembleManifest {
        seeds: ensemble.seeds.clone(),
        members: names,
    };
    let path = dir.join("ensemble.json");
    let body = serde_json::to_string_pretty(&manifest).map_err(|source| Error::Json {
        path: path.clone(),
        source,
    })?;
    std::fs::write(&path, body + "\n").map_err(|source| Error::IoFailure {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

/// Loads an ensemble saved by [`write_ensemble`]. All members must
/// share config (apart from seed) and band statistics.
pub fn read_ensemble(dir: &Path) -> Result<(Ensemble, Option<BandStats>)> {
    let path = dir.join("ensemble.json");
    let body = std::fs::read_to_string(&path).map_err(|source| Error::IoFailure {
        path: path.clone(),
        source,
    })?;
    let manifest: EnsembleManifest =
        serde_json::from_str(&body).map_err(|source| Error::Json {
            path: path.clone(),
            source,
        })?;
    check_seeds(&manifest.seeds)?;
    if manifest.seeds.len() != manifest.members.len() {
        return Err(Error::Manifest {
            path,
            detail: "seed and member lists differ in length".into(),
        });
    }
    let mut members = Vec::with_capacity(manifest.members.len());
    let mut stats: Option<Option<BandStats>> = None;
    let mut shared: Option<ModelConfig> = None;
    for (i, name) in manifest.members.iter().enumerate() {
        let (model, meta) = load_model(&dir.join(name))?;
        if model.cfg.seed != manifest.seeds[i] {
            return Err(Error::Manifest {
                path,
                detail: format!("member {i} seed does not match manifest"),
            });
        }
        let neutral = ModelConfig { seed: 0, ..meta.config.clone() };
        match &shared {
            None => shared = Some(neutral),
            Some(want) => {
                if *want != neutral {
                    return Err(Error::Manifest {
                        path,
                        detail: format!("member {i} config differs from member 0"),
                    });
                }
            }
        }
        let stats_key = meta.band_stats.clone();
        match &stats {
            None => stats = Some(stats_key),
            Some(want) => {
                let same = serde_json::to_string(want).ok()
                    == serde_json::to_string(&stats_key).ok();
                if !same {
                    return Err(Error::Manifest {
                        path,
                        detail: format!("member {i} band statistics differ from member 0"),
                    });
                }
            }
        }
        members.push(model);
    }
    Ok((
        Ensemble {
            members,
            seeds: manifest.seeds,
        },
        stats.flatten(),
    ))
}
