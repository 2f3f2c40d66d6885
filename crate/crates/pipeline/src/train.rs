//! Training loops for the segmentation and height networks.
//!
//! Both loops are deliberately sequential: one batch, one forward,
//! one backward, one Adam step. With a fixed sampler seed the whole
//! run is deterministic, which the reproducibility checks rely on.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use autodiff::loss::{dice_loss, masked_l1_loss};
use autodiff::optim::{AdamConfig, AdamState};

use crate::error::{Error, Result};
use crate::model::{save_model, CheckpointMeta, Model};
use crate::sampling::{make_batch, make_height_batch, HeightSampler, PatchSampler};

/// How long and how hard to train. The defaults are the desk-scale
/// schedule; the full-scale values (500 epochs x 40,000 iterations)
/// stay available through configuration but are never a test target.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainSchedule {
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_iters")]
    pub iterations_per_epoch: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
}

fn d_epochs() -> usize {
    30
}
fn d_iters() -> usize {
    200
}
fn d_batch() -> usize {
    32
}
fn d_lr() -> f64 {
    1e-5
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            epochs: d_epochs(),
            iterations_per_epoch: d_iters(),
            batch_size: d_batch(),
            learning_rate: d_lr(),
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.iterations_per_epoch == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "schedule counts must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument(
                "learning rate must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One line of the JSONL loss log.
#[derive(Debug, Clone, Serialize)]
pub struct TrainLogEntry {
    pub epoch: usize,
    pub iteration: usize,
    pub loss: f64,
}

/// Default per-pixel-sum smoothing constant of the Dice loss.
pub const DICE_EPSILON: f64 = 1.0;

/// Rejection budget when drawing one accepted patch.
const MAX_TRIES: usize = 1000;

fn emit(log: &mut Option<&mut dyn Write>, entry: &TrainLogEntry) -> Result<()> {
    if let Some(w) = log {
        let line = serde_json::to_string(entry).expect("log entry serializes");
        writeln!(w, "{line}").map_err(|e| Error::IoFailure {
            path: "<loss log>".into(),
            source: e,
        })?;
    }
    Ok(())
}

/// Minimize the masked Dice loss over sampled patches. Writes one log
/// line per iteration and, when a checkpoint directory is given, one
/// `epoch_NNNN.ckpt` at the end of every epoch.
pub fn train_segmentation(
    model: &mut Model<f32>,
    sampler: &mut PatchSampler,
    schedule: &TrainSchedule,
    dice_epsilon: f64,
    mut log: Option<&mut dyn Write>,
    checkpoint: Option<(&Path, &CheckpointMeta)>,
) -> Result<Vec<TrainLogEntry>> {
    schedule.validate()?;
    let mut adam = AdamState::new();
    let adam_cfg = AdamConfig::default();
    let mut curve = Vec::with_capacity(schedule.epochs * schedule.iterations_per_epoch);
    for epoch in 0..schedule.epochs {
        for iteration in 0..schedule.iterations_per_epoch {
            let step = epoch * schedule.iterations_per_epoch + iteration;
            let patches = sampler.sample_batch(schedule.batch_size, MAX_TRIES)?;
            let batch = make_batch(&patches)?;
            let trace = model.forward_trace(&batch.inputs, Some(&batch.height))?;
            let target = batch.one_hot();
            let mask = batch.loss_mask();
            let (loss, g_out) = dice_loss(&trace.output, &target, &mask, dice_epsilon)?;
            if !loss.is_finite() {
                return Err(Error::DivergenceDetected { step, loss });
            }
            model.zero_grads();
            model.backward(&batch.inputs, &trace, &g_out)?;
            let mut params = model.params_mut();
            adam.step(&mut params, schedule.learning_rate, &adam_cfg)?;
            let entry = TrainLogEntry {
                epoch,
                iteration,
                loss,
            };
            emit(&mut log, &entry)?;
            curve.push(entry);
        }
        if let Some((dir, meta)) = checkpoint {
            std::fs::create_dir_all(dir).map_err(|e| Error::IoFailure {
                path: dir.to_path_buf(),
                source: e,
            })?;
            save_model(dir.join(format!("epoch_{epoch:04}.ckpt")), model, meta)?;
        }
    }
    Ok(curve)
}

/// Minimize masked L1 against sparse normalized height targets.
/// Batches without any supervised pixel are skipped; if an entire
/// epoch yields none, supervision is too thin and training aborts.
pub fn train_height(
    model: &mut Model<f32>,
    sampler: &mut HeightSampler,
    schedule: &TrainSchedule,
    mut log: Option<&mut dyn Write>,
) -> Result<Vec<TrainLogEntry>> {
    schedule.validate()?;
    let mut adam = AdamState::new();
    let adam_cfg = AdamConfig::default();
    let mut curve = Vec::new();
    for epoch in 0..schedule.epochs {
        let mut stepped = 0usize;
        for iteration in 0..schedule.iterations_per_epoch {
            let step = epoch * schedule.iterations_per_epoch + iteration;
            let patches: Vec<_> = (0..schedule.batch_size).map(|_| sampler.sample()).collect();
            let batch = make_height_batch(&patches)?;
            let trace = model.forward_trace(&batch.inputs, None)?;
            let (loss, g_out) =
                match masked_l1_loss(&trace.output, &batch.target, &batch.mask) {
                    Ok(pair) => pair,
                    Err(autodiff::error::Error::EmptyMask) => continue,
                    Err(e) => return Err(e.into()),
                };
            if !loss.is_finite() {
                return Err(Error::DivergenceDetected { step, loss });
            }
            model.zero_grads();
            model.backward(&batch.inputs, &trace, &g_out)?;
            let mut params = model.params_mut();
            adam.step(&mut params, schedule.learning_rate, &adam_cfg)?;
            let entry = TrainLogEntry {
                epoch,
                iteration,
                loss,
            };
            emit(&mut log, &entry)?;
            curve.push(entry);
            stepped += 1;
        }
        if stepped == 0 {
            return Err(Error::NoPatches(format!(
                "no height supervision in any batch of epoch {epoch}"
            )));
        }
    }
    Ok(curve)
}
