//! Pipeline configuration: JSON file, filled with defaults, overridden
//! by command-line flags (flag > config > default).

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

use pipeline::ensemble::DEFAULT_ENSEMBLE_SIZE;
use pipeline::model::ModelConfig;
use pipeline::train::TrainSchedule;

/// Input and output locations. `heights` may point at either a CRAS
/// height raster or a trained height-model checkpoint; `predict`
/// inspects the file magic.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Scene stack directory (manifest.json plus scene files).
    pub scenes: PathBuf,
    /// Label polygons (JSON).
    pub labels: PathBuf,
    /// Canopy height source: CRAS raster or height-model checkpoint.
    pub heights: Option<PathBuf>,
    /// Sparse height supervision raster for `train-height`.
    pub height_samples: Option<PathBuf>,
    /// Evaluation site polygons (JSON), optional.
    pub sites: Option<PathBuf>,
    /// Named zone polygons (JSON), optional.
    pub zones: Option<PathBuf>,
    /// Forest-loss binary raster (CRAS), optional.
    pub forest_loss: Option<PathBuf>,
    /// Directory all artifacts are written into.
    pub outputs: PathBuf,
}

fn default_seeds() -> Vec<u64> {
    (1..=DEFAULT_ENSEMBLE_SIZE as u64).collect()
}

fn default_grid_step() -> f64 {
    0.01
}

fn default_ci_level() -> f64 {
    0.95
}

fn default_min_contributors() -> usize {
    1
}

fn default_dice_epsilon() -> f64 {
    1.0
}

fn default_period_days() -> i64 {
    182
}

fn default_scenes_per_period() -> usize {
    3
}

fn default_val_fraction() -> f64 {
    0.25
}

fn default_split_block() -> usize {
    32
}

fn default_min_stat_count() -> usize {
    100
}

fn default_tile() -> usize {
    pipeline::infer::DEFAULT_TILE
}

fn default_red_band() -> usize {
    2
}

fn default_nir_band() -> usize {
    3
}

fn default_height_seed() -> u64 {
    99
}

/// Everything a run needs beyond the subcommand: locations, model and
/// schedule, ensemble seeds, and analysis settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub paths: PathsConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub schedule: TrainSchedule,
    /// One seed per ensemble member; pairwise distinct.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Fixed decision threshold; when absent, commands fall back to
    /// the calibrated value on disk, then to 0.65.
    pub threshold: Option<f64>,
    #[serde(default = "default_grid_step")]
    pub grid_step: f64,
    #[serde(default = "default_ci_level")]
    pub ci_level: f64,
    #[serde(default = "default_min_contributors")]
    pub min_contributors: usize,
    #[serde(default = "default_dice_epsilon")]
    pub dice_epsilon: f64,
    /// Scene selection: length of each observation period in days.
    #[serde(default = "default_period_days")]
    pub period_days: i64,
    /// Scene selection: least-cloudy scenes kept per period.
    #[serde(default = "default_scenes_per_period")]
    pub scenes_per_period: usize,
    /// Held-out share of labeled pixels for the spatial block split.
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    #[serde(default = "default_split_block")]
    pub split_block: usize,
    #[serde(default)]
    pub split_seed: u64,
    /// Minimum clear labeled pixels per band for statistics.
    #[serde(default = "default_min_stat_count")]
    pub min_stat_count: usize,
    /// Tile edge for whole-scene inference.
    #[serde(default = "default_tile")]
    pub tile: usize,
    /// Zero-based band index of the red channel.
    #[serde(default = "default_red_band")]
    pub red_band: usize,
    /// Zero-based band index of the near-infrared channel.
    #[serde(default = "default_nir_band")]
    pub nir_band: usize,
    /// Init seed for the height-regressor run.
    #[serde(default = "default_height_seed")]
    pub height_seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            paths: PathsConfig::default(),
            model: ModelConfig::default(),
            schedule: TrainSchedule::default(),
            seeds: default_seeds(),
            threshold: None,
            grid_step: default_grid_step(),
            ci_level: default_ci_level(),
            min_contributors: default_min_contributors(),
            dice_epsilon: default_dice_epsilon(),
            period_days: default_period_days(),
            scenes_per_period: default_scenes_per_period(),
            val_fraction: default_val_fraction(),
            split_block: default_split_block(),
            split_seed: 0,
            min_stat_count: default_min_stat_count(),
            tile: default_tile(),
            red_band: default_red_band(),
            nir_band: default_nir_band(),
            height_seed: default_height_seed(),
        }
    }
}

impl PipelineConfig {
    /// Reads and validates a config file.
    pub fn load(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: PipelineConfig = serde_json::from_str(&body)
            .with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate()
            .with_context(|| format!("validating config {}", path.display()))?;
        Ok(cfg)
    }

    /// Structural invariants that hold for every subcommand.
    pub fn validate(&self) -> Result<()> {
        self.model.validate().context("model config")?;
        self.schedule.validate().context("train schedule")?;
        ensure!(!self.seeds.is_empty(), "seed list is empty");
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        ensure!(
            sorted.windows(2).all(|w| w[0] != w[1]),
            "ensemble seeds must be pairwise distinct"
        );
        if let Some(t) = self.threshold {
            ensure!((0.0..=1.0).contains(&t), "threshold {t} outside [0, 1]");
        }
        ensure!(
            self.grid_step > 0.0 && self.grid_step <= 0.5,
            "grid step {} outside (0, 0.5]",
            self.grid_step
        );
        ensure!(
            self.ci_level > 0.0 && self.ci_level < 1.0,
            "confidence level {} outside (0, 1)",
            self.ci_level
        );
        ensure!(self.min_contributors >= 1, "min_contributors must be >= 1");
        ensure!(self.dice_epsilon > 0.0, "dice epsilon must be positive");
        ensure!(self.period_days > 0, "period length must be positive");
        ensure!(self.scenes_per_period > 0, "scenes per period must be >= 1");
        ensure!(
            (0.0..1.0).contains(&self.val_fraction),
            "validation fraction {} outside [0, 1)",
            self.val_fraction
        );
        ensure!(self.split_block > 0, "split block must be positive");
        ensure!(self.tile > 0, "tile size must be positive");
        ensure!(
            self.red_band < 9 && self.nir_band < 9 && self.red_band != self.nir_band,
            "red and NIR must be distinct spectral band indices below 9"
        );
        Ok(())
    }

    /// Checks that the inputs a subcommand will read actually exist,
    /// before anything is written.
    pub fn ensure_inputs(&self, needs: &[Input]) -> Result<()> {
        for need in needs {
            match need {
                Input::Scenes => {
                    let manifest = self.paths.scenes.join("manifest.json");
                    ensure!(
                        manifest.is_file(),
                        "scene stack manifest {} not found",
                        manifest.display()
                    );
                }
                Input::Labels => ensure!(
                    self.paths.labels.is_file(),
                    "label polygons {} not found",
                    self.paths.labels.display()
                ),
                Input::Heights => {
                    if self.model.use_height {
                        let Some(p) = &self.paths.heights else {
                            bail!("model uses height injection but paths.heights is not set");
                        };
                        ensure!(p.is_file(), "height source {} not found", p.display());
                    }
                }
                Input::Sites => {
                    if let Some(p) = &self.paths.sites {
                        ensure!(p.is_file(), "site polygons {} not found", p.display());
                    }
                }
                Input::HeightSamples => {
                    let Some(p) = &self.paths.height_samples else {
                        bail!("this command needs paths.height_samples");
                    };
                    ensure!(
                        p.is_file(),
                        "height-sample raster {} not found",
                        p.display()
                    );
                }
                Input::Zones => {
                    let Some(p) = &self.paths.zones else {
                        bail!("this command needs paths.zones");
                    };
                    ensure!(p.is_file(), "zone polygons {} not found", p.display());
                }
                Input::ForestLoss => {
                    if let Some(p) = &self.paths.forest_loss {
                        ensure!(p.is_file(), "forest-loss raster {} not found", p.display());
                    }
                }
                Input::Ensemble => {
                    let manifest = self.ensemble_dir().join("ensemble.json");
                    ensure!(
                        manifest.is_file(),
                        "ensemble manifest {} not found; run `train` first",
                        manifest.display()
                    );
                }
                Input::Predictions => {
                    let manifest = self.predictions_dir().join("manifest.json");
                    ensure!(
                        manifest.is_file(),
                        "predictions manifest {} not found; run `predict` first",
                        manifest.display()
                    );
                }
                Input::Confidence => {
                    let p = self.confidence_path();
                    ensure!(
                        p.is_file(),
                        "confidence map {} not found; run `aggregate` first",
                        p.display()
                    );
                }
                Input::SplitMask => {
                    let p = self.split_path();
                    ensure!(
                        p.is_file(),
                        "split mask {} not found; run `train` first",
                        p.display()
                    );
                }
            }
        }
        Ok(())
    }

    pub fn ensemble_dir(&self) -> PathBuf {
        self.paths.outputs.join("ensemble")
    }

    pub fn predictions_dir(&self) -> PathBuf {
        self.paths.outputs.join("predictions")
    }

    pub fn logs_dir(&self) -> PathBuf {
        self.paths.outputs.join("logs")
    }

    pub fn confidence_path(&self) -> PathBuf {
        self.paths.outputs.join("confidence.cras")
    }

    pub fn split_path(&self) -> PathBuf {
        self.paths.outputs.join("split.cras")
    }

    pub fn threshold_path(&self) -> PathBuf {
        self.paths.outputs.join("threshold.json")
    }
}

/// Inputs a subcommand depends on; checked before any write happens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Input {
    Scenes,
    Labels,
    Heights,
    HeightSamples,
    Sites,
    Zones,
    ForestLoss,
    Ensemble,
    Predictions,
    Confidence,
    SplitMask,
}
