//! Subcommand implementations. Each command reads and checks every
//! input it needs before writing anything, writes its artifacts under
//! the configured outputs directory, and finishes with a run manifest.
//! All outputs are deterministic for a fixed config, so rerunning a
//! command yields byte-identical files.

use std::fs;
use std::io::Read as _;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

use pipeline::analysis::{
    area_estimate, ndvi, write_member_areas_csv, write_zone_stats_csv, zonal_mean, zone_overlay,
};
use pipeline::ensemble::{
    aggregate_confidence, predict_ensemble, read_ensemble, threshold_map, train_ensemble,
    write_ensemble, ConfidenceMap, MemberPrediction,
};
use pipeline::evaluate::{calibrate_threshold, confusion, evaluate_polygons, metrics, write_f1_curve};
use pipeline::infer::predict_height_map;
use pipeline::model::{load_model, save_model, CheckpointMeta, Model};
use pipeline::sampling::{
    compute_band_stats, read_stack, select_scenes, HeightSampler, Scene, PATCH_SIZE,
};
use pipeline::synth::{generate, write_synthetic, SyntheticSceneSpec};
use pipeline::train::{train_height, TrainLogEntry};
use raster::{
    rasterize_polygons, read_polygons, read_raster, spatial_block_split, write_raster, Raster,
    Split, SplitMask,
};

use crate::config::{Input, PipelineConfig};
use crate::manifest::RunManifest;

/// Fallback decision threshold when neither the config nor a prior
/// `calibrate` run provides one.
pub const FALLBACK_THRESHOLD: f64 = 0.65;

/// `threshold.json`, written by `calibrate` and consumed as the second
/// choice in threshold resolution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThresholdFile {
    pub threshold: f64,
    pub f1: f64,
}

/// `predictions/manifest.json`: index of the per-member, per-scene
/// confidence rasters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionsManifest {
    pub entries: Vec<PredictionEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionEntry {
    pub member: usize,
    pub timestamp: i64,
    pub file: String,
}

fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value)
        .with_context(|| format!("serializing {}", path.display()))?;
    body.push('\n');
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let body =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&body).with_context(|| format!("parsing {}", path.display()))
}

// ---------------------------------------------------------------------------
// Shared input loading
// ---------------------------------------------------------------------------

/// Reads the scene stack and keeps the least-cloudy scenes per period.
fn load_scenes(cfg: &PipelineConfig) -> Result<Vec<Scene>> {
    let stack = read_stack(&cfg.paths.scenes)
        .with_context(|| format!("loading scene stack {}", cfg.paths.scenes.display()))?;
    let selected = select_scenes(&stack, cfg.period_days, cfg.scenes_per_period)
        .context("selecting scenes per period")?;
    ensure!(!selected.scenes.is_empty(), "scene selection kept nothing");
    Ok(selected.scenes)
}

/// Label polygons burned onto the scene grid.
fn load_labels(cfg: &PipelineConfig, grid: &Raster) -> Result<Raster> {
    let polys = read_polygons(&cfg.paths.labels)
        .with_context(|| format!("loading labels {}", cfg.paths.labels.display()))?;
    ensure!(!polys.is_empty(), "label file holds no polygons");
    Ok(rasterize_polygons(&polys, grid.width(), grid.height(), *grid.geo())?)
}

/// Identical split and statistics derivation for `train` and
/// `train-height`, so both see the same standardization.
fn split_and_stats(
    cfg: &PipelineConfig,
    scenes: &[Scene],
    labels: &Raster,
) -> Result<(SplitMask, pipeline::sampling::BandStats)> {
    let split = spatial_block_split(labels, cfg.split_block, cfg.val_fraction, cfg.split_seed)
        .context("building the spatial block split")?;
    let stats = compute_band_stats(scenes, &split, cfg.min_stat_count)
        .context("computing band statistics on the training split")?;
    Ok((split, stats))
}

fn file_magic(path: &Path) -> Result<[u8; 4]> {
    let mut f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)
        .with_context(|| format!("{} is shorter than a file header", path.display()))?;
    Ok(magic)
}

/// Canopy height for injection. A CRAS file is used as-is; a model
/// checkpoint is run over the least-cloudy scene and the resulting map
/// is persisted as `height_map.cras` for inspection.
fn resolve_height(cfg: &PipelineConfig, scenes: &[Scene]) -> Result<Raster> {
    let path = cfg
        .paths
        .heights
        .as_ref()
        .context("height injection is enabled but paths.heights is not set")?;
    let height = match &file_magic(path)? {
        m if *m == raster::io::MAGIC => read_raster(path)
            .with_context(|| format!("loading height raster {}", path.display()))?,
        m if *m == autodiff::checkpoint::MAGIC => {
            let (model, meta) = load_model(path)
                .with_context(|| format!("loading height model {}", path.display()))?;
            let stats = meta
                .band_stats
                .context("height checkpoint carries no band statistics")?;
            let scene = least_cloudy(scenes);
            let map = predict_height_map(&model, scene, &stats, cfg.tile)
                .context("running the height model")?;
            fs::create_dir_all(&cfg.paths.outputs)
                .with_context(|| format!("creating {}", cfg.paths.outputs.display()))?;
            write_raster(&map, cfg.paths.outputs.join("height_map.cras"))?;
            map
        }
        other => bail!(
            "{} is neither a CRAS raster nor a model checkpoint (magic {:?})",
            path.display(),
            other
        ),
    };
    ensure!(
        height.same_grid(&scenes[0].raster),
        "height map does not share the scene grid"
    );
    Ok(height)
}

fn least_cloudy(scenes: &[Scene]) -> &Scene {
    scenes
        .iter()
        .min_by(|a, b| {
            (a.cloud_fraction, a.timestamp)
                .partial_cmp(&(b.cloud_fraction, b.timestamp))
                .expect("cloud fractions are finite")
        })
        .expect("scene list is never empty here")
}

fn load_confidence(cfg: &PipelineConfig) -> Result<ConfidenceMap> {
    let raster = read_raster(cfg.confidence_path())?;
    Ok(ConfidenceMap::from_raster(raster)?)
}

fn load_split(cfg: &PipelineConfig) -> Result<SplitMask> {
    let raster = read_raster(cfg.split_path())?;
    Ok(SplitMask::from_raster(&raster)?)
}

fn val_mask(split: &SplitMask) -> Vec<bool> {
    split.cells().iter().map(|s| *s == Split::Val).collect()
}

/// Decision threshold, in order of preference: explicit configuration
/// (flag or config file), a prior `calibrate` run, then the stock 0.65.
pub fn resolve_threshold(cfg: &PipelineConfig) -> Result<(f64, &'static str)> {
    if let Some(t) = cfg.threshold {
        return Ok((t, "configured"));
    }
    let path = cfg.threshold_path();
    if path.is_file() {
        let file: ThresholdFile = read_json(&path)?;
        ensure!(
            (0.0..=1.0).contains(&file.threshold),
            "calibrated threshold {} outside [0, 1]",
            file.threshold
        );
        return Ok((file.threshold, "calibrated"));
    }
    Ok((FALLBACK_THRESHOLD, "default"))
}

fn load_predictions(cfg: &PipelineConfig) -> Result<Vec<MemberPrediction>> {
    let dir = cfg.predictions_dir();
    let manifest: PredictionsManifest = read_json(&dir.join("manifest.json"))?;
    ensure!(!manifest.entries.is_empty(), "predictions manifest is empty");
    let mut preds = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let map = read_raster(dir.join(&entry.file))?;
        preds.push(MemberPrediction {
            member: entry.member,
            timestamp: entry.timestamp,
            map,
        });
    }
    preds.sort_by_key(|p| (p.member, p.timestamp));
    Ok(preds)
}

// ---------------------------------------------------------------------------
// gen-synthetic
// ---------------------------------------------------------------------------

pub fn cmd_gen_synthetic(
    spec_path: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
) -> Result<()> {
    let mut spec: SyntheticSceneSpec = match spec_path {
        Some(p) => read_json(p)?,
        None => SyntheticSceneSpec::default(),
    };
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let scene = generate(&spec).context("generating the synthetic scene")?;
    write_synthetic(out, &spec, &scene).context("writing synthetic artifacts")?;
    RunManifest::new("gen-synthetic", &spec, vec![spec.seed])?.write(out)?;
    println!(
        "generated {}x{} scene, {} acquisitions, cocoa fraction {:.3}, {} label polygons -> {}",
        spec.width,
        spec.height,
        scene.stack.scenes.len(),
        scene.cocoa_fraction,
        scene.labels.len(),
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train / train-height
// ---------------------------------------------------------------------------

pub fn cmd_train(cfg: &PipelineConfig) -> Result<()> {
    cfg.ensure_inputs(&[Input::Scenes, Input::Labels, Input::Heights])?;
    let scenes = load_scenes(cfg)?;
    let labels = load_labels(cfg, &scenes[0].raster)?;
    let (split, stats) = split_and_stats(cfg, &scenes, &labels)?;
    let height = if cfg.model.use_height {
        Some(resolve_height(cfg, &scenes)?)
    } else {
        None
    };

    let (mut ensemble, logs) = train_ensemble(
        &cfg.model,
        &cfg.seeds,
        &scenes,
        &labels,
        height.as_ref(),
        &stats,
        &split,
        &cfg.schedule,
        cfg.dice_epsilon,
    )?;

    fs::create_dir_all(&cfg.paths.outputs)
        .with_context(|| format!("creating {}", cfg.paths.outputs.display()))?;
    write_raster(&split.to_raster(*scenes[0].raster.geo()), cfg.split_path())?;
    write_ensemble(&cfg.ensemble_dir(), &mut ensemble, Some(&stats))?;
    write_logs(&cfg.logs_dir(), &logs)?;
    RunManifest::new("train", cfg, cfg.seeds.clone())?.write(&cfg.paths.outputs)?;

    for (i, curve) in logs.iter().enumerate() {
        let last = curve.last().map_or(f64::NAN, |e| e.loss);
        println!("member {i:02}: final dice loss {last:.4}");
    }
    println!(
        "trained {} members -> {}",
        ensemble.members.len(),
        cfg.ensemble_dir().display()
    );
    Ok(())
}

fn write_logs(dir: &Path, logs: &[Vec<TrainLogEntry>]) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (i, curve) in logs.iter().enumerate() {
        write_jsonl(&dir.join(format!("member_{i:02}.jsonl")), curve)?;
    }
    Ok(())
}

fn write_jsonl(path: &Path, entries: &[TrainLogEntry]) -> Result<()> {
    let mut body = String::new();
    for e in entries {
        body.push_str(&serde_json::to_string(e).context("serializing log entry")?);
        body.push('\n');
    }
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

pub fn cmd_train_height(cfg: &PipelineConfig) -> Result<()> {
    cfg.ensure_inputs(&[Input::Scenes, Input::Labels, Input::HeightSamples])?;
    let scenes = load_scenes(cfg)?;
    let labels = load_labels(cfg, &scenes[0].raster)?;
    let (_, stats) = split_and_stats(cfg, &scenes, &labels)?;
    let samples_path = cfg.paths.height_samples.as_ref().expect("checked above");
    let samples = read_raster(samples_path)
        .with_context(|| format!("loading height samples {}", samples_path.display()))?;

    let hcfg = cfg.model.height_variant(cfg.height_seed);
    let mut model: Model<f32> = Model::build(&hcfg)?;
    let mut sampler =
        HeightSampler::new(&scenes, &samples, &stats, PATCH_SIZE, cfg.height_seed)?;
    let curve = train_height(&mut model, &mut sampler, &cfg.schedule, None)?;

    fs::create_dir_all(&cfg.paths.outputs)
        .with_context(|| format!("creating {}", cfg.paths.outputs.display()))?;
    let ckpt = cfg.paths.outputs.join("height_model.ckpt");
    save_model(
        &ckpt,
        &mut model,
        &CheckpointMeta {
            config: hcfg,
            band_stats: Some(stats),
        },
    )?;
    fs::create_dir_all(cfg.logs_dir())
        .with_context(|| format!("creating {}", cfg.logs_dir().display()))?;
    write_jsonl(&cfg.logs_dir().join("height.jsonl"), &curve)?;
    RunManifest::new("train-height", cfg, vec![cfg.height_seed])?.write(&cfg.paths.outputs)?;

    let last = curve.last().map_or(f64::NAN, |e| e.loss);
    println!("height model: final L1 loss {last:.4} -> {}", ckpt.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// predict / aggregate
// ---------------------------------------------------------------------------

pub fn cmd_predict(cfg: &PipelineConfig) -> Result<()> {
    cfg.ensure_inputs(&[Input::Scenes, Input::Ensemble])?;
    let scenes = load_scenes(cfg)?;
    let (ensemble, stats) = read_ensemble(&cfg.ensemble_dir())?;
    let stats = stats.context("ensemble checkpoints carry no band statistics")?;
    // The saved member config decides whether height is injected; it
    // may differ from cfg.model when `train --no-height` was used.
    let height = if ensemble.members[0].cfg.use_height {
        Some(resolve_height(cfg, &scenes)?)
    } else {
        None
    };

    let preds = predict_ensemble(&ensemble, &scenes, height.as_ref(), &stats, cfg.tile)?;
    let dir = cfg.predictions_dir();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut entries = Vec::with_capacity(preds.len());
    for p in &preds {
        let file = format!("member_{:02}_t{}.cras", p.member, p.timestamp);
        write_raster(&p.map, dir.join(&file))?;
        entries.push(PredictionEntry {
            member: p.member,
            timestamp: p.timestamp,
            file,
        });
    }
    write_json_pretty(&dir.join("manifest.json"), &PredictionsManifest { entries })?;
    RunManifest::new("predict", cfg, ensemble.seeds.clone())?.write(&cfg.paths.outputs)?;
    println!(
        "predicted {} member x scene maps -> {}",
        preds.len(),
        dir.display()
    );
    Ok(())
}

pub fn cmd_aggregate(cfg: &PipelineConfig) -> Result<()> {
    cfg.ensure_inputs(&[Input::Predictions])?;
    let preds = load_predictions(cfg)?;
    let conf = aggregate_confidence(&preds, cfg.min_contributors)?;
    fs::create_dir_all(&cfg.paths.outputs)
        .with_context(|| format!("creating {}", cfg.paths.outputs.display()))?;
    write_raster(conf.raster(), cfg.confidence_path())?;
    RunManifest::new("aggregate", cfg, cfg.seeds.clone())?.write(&cfg.paths.outputs)?;

    let nodata = conf.nodata();
    let valid = conf
        .confidence()
        .iter()
        .filter(|&&v| f64::from(v) != nodata)
        .count();
    println!(
        "aggregated {} maps into {} ({} of {} pixels valid)",
        preds.len(),
        cfg.confidence_path().display(),
        valid,
        conf.raster().plane_len()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// calibrate / eval
// ---------------------------------------------------------------------------

pub fn cmd_calibrate(cfg: &PipelineConfig) -> Result<()> {
    cfg.ensure_inputs(&[Input::Confidence, Input::Labels, Input::SplitMask])?;
    let conf = load_confidence(cfg)?;
    let split = load_split(cfg)?;
    let truth = load_labels(cfg, conf.raster())?;
    let mask = val_mask(&split);
    let (t, curve) = calibrate_threshold(&conf, &truth, &mask, cfg.grid_step)?;
    let f1 = curve
        .iter()
        .find(|(tt, _)| *tt == t)
        .map(|(_, f)| *f)
        .expect("calibrated threshold comes from the curve grid");

    write_json_pretty(&cfg.threshold_path(), &ThresholdFile { threshold: t, f1 })?;
    write_f1_curve(&cfg.paths.outputs.join("f1_curve.csv"), &curve)?;
    RunManifest::new("calibrate", cfg, cfg.seeds.clone())?.write(&cfg.paths.outputs)?;
    println!("calibrated threshold {t:.2} (held-out F1 {f1:.4})");
    Ok(())
}

pub fn cmd_eval(cfg: &PipelineConfig) -> Result<()> {
    cfg.ensure_inputs(&[Input::Confidence, Input::Labels, Input::SplitMask, Input::Sites])?;
    let conf = load_confidence(cfg)?;
    let split = load_split(cfg)?;
    let truth = load_labels(cfg, conf.raster())?;
    let (t, source) = resolve_threshold(cfg)?;

    let pred = threshold_map(&conf, t)?;
    let cm = confusion(&pred, &truth, &val_mask(&split))?;
    let mut report = metrics(&cm);
    report.threshold = Some(t);
    write_json_pretty(&cfg.paths.outputs.join("eval_report.json"), &report)?;
    println!("threshold {t:.2} ({source})");
    println!("{}", report.to_table());

    if let Some(sites_path) = &cfg.paths.sites {
        let sites = read_polygons(sites_path)?;
        let site_eval = evaluate_polygons(&conf, &sites, t)?;
        write_json_pretty(&cfg.paths.outputs.join("site_eval.json"), &site_eval)?;
        let correct = site_eval
            .outcomes
            .iter()
            .filter(|o| o.cocoa_truth == o.cocoa_pred)
            .count();
        println!(
            "sites: {} of {} classified correctly ({} skipped without valid pixels)",
            correct,
            site_eval.outcomes.len(),
            site_eval.skipped.len()
        );
    }
    RunManifest::new("eval", cfg, cfg.seeds.clone())?.write(&cfg.paths.outputs)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// area / overlay / ndvi
// ---------------------------------------------------------------------------

pub fn cmd_area(cfg: &PipelineConfig) -> Result<()> {
    cfg.ensure_inputs(&[Input::Predictions])?;
    let preds = load_predictions(cfg)?;
    let (t, source) = resolve_threshold(cfg)?;

    // One confidence map per member, each over that member's scenes.
    let mut maps = Vec::new();
    let mut lo = 0;
    while lo < preds.len() {
        let hi = preds[lo..]
            .iter()
            .position(|p| p.member != preds[lo].member)
            .map_or(preds.len(), |off| lo + off);
        maps.push(aggregate_confidence(&preds[lo..hi], cfg.min_contributors)?);
        lo = hi;
    }
    let est = area_estimate(&maps, t, cfg.ci_level)?;

    fs::create_dir_all(&cfg.paths.outputs)
        .with_context(|| format!("creating {}", cfg.paths.outputs.display()))?;
    write_json_pretty(&cfg.paths.outputs.join("area.json"), &est)?;
    write_member_areas_csv(&cfg.paths.outputs.join("member_areas.csv"), &est)?;
    RunManifest::new("area", cfg, cfg.seeds.clone())?.write(&cfg.paths.outputs)?;

    match (est.ci_low_ha, est.ci_high_ha) {
        (Some(lo), Some(hi)) => println!(
            "cocoa area {:.2} ha ({:.0} % CI {:.2}..{:.2}) at threshold {t:.2} ({source}), {} members",
            est.mean_ha,
            est.level * 100.0,
            lo,
            hi,
            est.member_areas_ha.len()
        ),
        _ => println!(
            "cocoa area {:.2} ha at threshold {t:.2} ({source}), single member (no interval)",
            est.mean_ha
        ),
    }
    Ok(())
}

pub fn cmd_overlay(cfg: &PipelineConfig) -> Result<()> {
    cfg.ensure_inputs(&[Input::Confidence, Input::Zones, Input::ForestLoss])?;
    let conf = load_confidence(cfg)?;
    let (t, source) = resolve_threshold(cfg)?;
    let zones_path = cfg.paths.zones.as_ref().expect("checked above");
    let zones = read_polygons(zones_path)?;
    let loss = cfg
        .paths
        .forest_loss
        .as_ref()
        .map(read_raster)
        .transpose()?;

    let binary = threshold_map(&conf, t)?;
    let stats = zone_overlay(&binary, &zones, loss.as_ref())?;

    fs::create_dir_all(&cfg.paths.outputs)
        .with_context(|| format!("creating {}", cfg.paths.outputs.display()))?;
    write_raster(&binary, cfg.paths.outputs.join("cocoa_map.cras"))?;
    write_json_pretty(&cfg.paths.outputs.join("zone_stats.json"), &stats)?;
    write_zone_stats_csv(&cfg.paths.outputs.join("zone_stats.csv"), &stats)?;
    RunManifest::new("overlay", cfg, cfg.seeds.clone())?.write(&cfg.paths.outputs)?;

    println!("threshold {t:.2} ({source})");
    for z in &stats {
        let defo = z
            .deforestation_pct
            .map_or("n/a".to_string(), |d| format!("{d:.1} %"));
        println!(
            "zone {:<24} cocoa {:>10.2} ha  cover {:>5.1} %  deforested-land share {}",
            z.name, z.cocoa_area_ha, z.land_cover_pct, defo
        );
    }
    Ok(())
}

/// Single-band raster of one spectral band, nodata wherever the scene
/// is cloudy or unobserved.
fn scene_band(scene: &Scene, band: usize) -> Raster {
    let r = &scene.raster;
    let (w, h) = (r.width(), r.height());
    let src = r.band_f32(band);
    let mut data = vec![raster::DEFAULT_NODATA_F32 as f32; w * h];
    for row in 0..h {
        for col in 0..w {
            // Negative reflectance is a retrieval artifact; the vegetation
            // index requires nonnegative inputs, so treat it as no observation.
            let v = src[row * w + col];
            if scene.is_clear(row, col) && scene.is_valid(row, col) && v >= 0.0 {
                data[row * w + col] = v;
            }
        }
    }
    Raster::new(w, h, 1, raster::DEFAULT_NODATA_F32, *r.geo(), raster::Samples::F32(data))
        .expect("band raster dims come from the scene")
}

pub fn cmd_ndvi(cfg: &PipelineConfig, cocoa_only: bool) -> Result<()> {
    let mut needs = vec![Input::Scenes];
    if cocoa_only {
        needs.push(Input::Confidence);
    }
    cfg.ensure_inputs(&needs)?;
    let scenes = load_scenes(cfg)?;
    let mask = if cocoa_only {
        let conf = load_confidence(cfg)?;
        let (t, source) = resolve_threshold(cfg)?;
        println!("masking to cocoa at threshold {t:.2} ({source})");
        Some(threshold_map(&conf, t)?)
    } else {
        None
    };

    // Temporal compositing: per-scene NDVI, then the per-pixel mean
    // over scenes with a clear observation.
    let grid = &scenes[0].raster;
    let (w, h) = (grid.width(), grid.height());
    let mut sum = vec![0.0f64; w * h];
    let mut count = vec![0u32; w * h];
    for scene in &scenes {
        let nir = scene_band(scene, cfg.nir_band);
        let red = scene_band(scene, cfg.red_band);
        let nd = ndvi(&nir, &red, mask.as_ref())?;
        let vals = nd.band_f32(0);
        for i in 0..w * h {
            if f64::from(vals[i]) != nd.nodata() {
                sum[i] += f64::from(vals[i]);
                count[i] += 1;
            }
        }
    }
    let data: Vec<f32> = (0..w * h)
        .map(|i| {
            if count[i] == 0 {
                raster::DEFAULT_NODATA_F32 as f32
            } else {
                (sum[i] / f64::from(count[i])) as f32
            }
        })
        .collect();
    let composite = Raster::new(
        w,
        h,
        1,
        raster::DEFAULT_NODATA_F32,
        *grid.geo(),
        raster::Samples::F32(data),
    )?;

    fs::create_dir_all(&cfg.paths.outputs)
        .with_context(|| format!("creating {}", cfg.paths.outputs.display()))?;
    write_raster(&composite, cfg.paths.outputs.join("ndvi.cras"))?;
    if let Some(zones_path) = &cfg.paths.zones {
        let zones = read_polygons(zones_path)?;
        let means = zonal_mean(&composite, &zones)?;
        write_json_pretty(&cfg.paths.outputs.join("ndvi_zones.json"), &means)?;
    }
    RunManifest::new("ndvi", cfg, cfg.seeds.clone())?.write(&cfg.paths.outputs)?;

    let (mut total, mut n) = (0.0f64, 0usize);
    for &v in composite.band_f32(0) {
        if f64::from(v) != composite.nodata() {
            total += f64::from(v);
            n += 1;
        }
    }
    if n > 0 {
        println!("mean NDVI {:.4} over {} pixels, {} scenes", total / n as f64, n, scenes.len());
    } else {
        println!("no valid NDVI pixels");
    }
    Ok(())
}
