//! Confusion counting, per-class metrics, threshold calibration and
//! the site-polygon majority evaluation.
//!
//! All strict `confidence > threshold` comparisons are made in f32,
//! the storage type of confidence maps, so a grid threshold like 0.4
//! compares equal (not below) against a stored 0.4 and calibration
//! agrees exactly with later map thresholding.

use std::path::Path;

use serde::{Deserialize, Serialize};

use raster::{polygon_mask, LabelPolygon, Raster, NODATA_LABEL};

use crate::ensemble::ConfidenceMap;
use crate::error::{Error, Result};

/// Cocoa label value in rasterized class masks.
pub const COCOA_CLASS: u8 = 1;

/// Default calibration grid resolution.
pub const DEFAULT_GRID_STEP: f64 = 0.01;

/// Pixel counts with cocoa as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Swaps the positive class, giving background-as-positive counts.
    pub fn class_swap(&self) -> Self {
        Self {
            tp: self.tn,
            fp: self.fn_,
            fn_: self.fp,
            tn: self.tp,
        }
    }

    fn record(&mut self, truth_pos: bool, pred_pos: bool) {
        match (truth_pos, pred_pos) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (true, false) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }
}

/// Precision, recall and F1 for one class; `degenerate` marks any
/// zero denominator (the affected metric is reported as 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub degenerate: bool,
}

fn ratio(num: u64, den: u64, degenerate: &mut bool) -> f64 {
    if den == 0 {
        *degenerate = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ClassMetrics {
    fn from_counts(cm: &ConfusionMatrix) -> Self {
        let mut degenerate = false;
        let precision = ratio(cm.tp, cm.tp + cm.fp, &mut degenerate);
        let recall = ratio(cm.tp, cm.tp + cm.fn_, &mut degenerate);
        let f1 = if precision + recall == 0.0 {
            degenerate = true;
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f1,
            degenerate,
        }
    }
}

/// Two-class evaluation summary. Background metrics come from the
/// class-swapped confusion matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    pub cocoa: ClassMetrics,
    pub background: ClassMetrics,
    pub accuracy: f64,
    pub degenerate: bool,
    pub threshold: Option<f64>,
}

/// Derives all metrics from a confusion matrix; zero denominators
/// yield 0 plus a degenerate flag instead of NaN.
pub fn metrics(cm: &ConfusionMatrix) -> EvalReport {
    let cocoa = ClassMetrics::from_counts(cm);
    let background = ClassMetrics::from_counts(&cm.class_swap());
    let total = cm.total();
    let accuracy = if total == 0 {
        0.0
    } else {
        (cm.tp + cm.tn) as f64 / total as f64
    };
    EvalReport {
        confusion: *cm,
        cocoa,
        background,
        accuracy,
        degenerate: total == 0 || cocoa.degenerate || background.degenerate,
        threshold: None,
    }
}

impl EvalReport {
    /// Aligned-column text rendering: one row per class plus the
    /// overall accuracy.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<12}{:>10}{:>10}{:>10}\n",
            "class", "precision", "recall", "f1"
        ));
        for (name, m) in [("cocoa", &self.cocoa), ("background", &self.background)] {
            out.push_str(&format!(
                "{:<12}{:>10.4}{:>10.4}{:>10.4}\n",
                name, m.precision, m.recall, m.f1
            ));
        }
        out.push_str(&format!("{:<12}{:>10.4}\n", "accuracy", self.accuracy));
        if let Some(t) = self.threshold {
            out.push_str(&format!("{:<12}{:>10.4}\n", "threshold", t));
        }
        if self.degenerate {
            out.push_str("note: some denominators were zero; affected metrics report 0\n");
        }
        out
    }
}

/// Exact pixel counts of a binary map against class labels. Pixels
/// are counted when the mask admits them and neither input is nodata
/// or unlabeled.
pub fn confusion(pred: &Raster, truth: &Raster, mask: &[bool]) -> Result<ConfusionMatrix> {
    if pred.bands() != 1 || truth.bands() != 1 {
        return Err(Error::InvalidArgument(
            "confusion expects single-band rasters".into(),
        ));
    }
    if !pred.same_grid(truth) {
        return Err(Error::GridMismatch(
            "prediction and truth cover different grids".into(),
        ));
    }
    if mask.len() != pred.plane_len() {
        return Err(Error::InvalidArgument(
            "mask length does not match the grid".into(),
        ));
    }
    let p = pred.band_u8(0);
    let t = truth.band_u8(0);
    let mut cm = ConfusionMatrix::default();
    for i in 0..p.len() {
        if !mask[i] || p[i] == NODATA_LABEL || t[i] == NODATA_LABEL {
            continue;
        }
        cm.record(t[i] == COCOA_CLASS, p[i] == COCOA_CLASS);
    }
    if cm.total() == 0 {
        return Err(Error::EmptyMask("confusion counting"));
    }
    Ok(cm)
}

fn count_at(
    conf: &[f32],
    nodata: f64,
    truth: &[u8],
    mask: &[bool],
    t: f32,
) -> ConfusionMatrix {
    let mut cm = ConfusionMatrix::default();
    for i in 0..conf.len() {
        if !mask[i] || f64::from(conf[i]) == nodata || truth[i] == NODATA_LABEL {
            continue;
        }
        cm.record(truth[i] == COCOA_CLASS, conf[i] > t);
    }
    cm
}

/// The calibration grid for a step: {0, step, 2·step, …} up to and
/// including 1 where the step divides it.
pub fn threshold_grid(grid_step: f64) -> Result<Vec<f64>> {
    if !(grid_step > 0.0 && grid_step <= 0.5) {
        return Err(Error::InvalidArgument(format!(
            "grid step {grid_step} outside (0, 0.5]"
        )));
    }
    let n = (1.0 / grid_step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| (i as f64 * grid_step).min(1.0)).collect())
}

/// Sweeps the threshold grid and returns the smallest threshold with
/// maximal cocoa F1, plus the full (threshold, F1) curve.
pub fn calibrate_threshold(
    conf: &ConfidenceMap,
    truth: &Raster,
    mask: &[bool],
    grid_step: f64,
) -> Result<(f64, Vec<(f64, f64)>)> {
    let grid = threshold_grid(grid_step)?;
    if truth.bands() != 1 || !truth.same_grid(conf.raster()) {
        return Err(Error::GridMismatch(
            "labels do not share the confidence grid".into(),
        ));
    }
    if mask.len() != truth.plane_len() {
        return Err(Error::InvalidArgument(
            "mask length does not match the grid".into(),
        ));
    }
    let values = conf.confidence();
    let labels = truth.band_u8(0);
    let nodata = conf.nodata();
    let usable = (0..labels.len())
        .any(|i| mask[i] && f64::from(values[i]) != nodata && labels[i] != NODATA_LABEL);
    if !usable {
        return Err(Error::EmptyMask("threshold calibration"));
    }
    let mut curve = Vec::with_capacity(grid.len());
    let mut best_t = grid[0];
    let mut best_f1 = f64::NEG_INFINITY;
    for &t in &grid {
        let cm = count_at(values, nodata, labels, mask, t as f32);
        let f1 = metrics(&cm).cocoa.f1;
        curve.push((t, f1));
        if f1 > best_f1 {
            best_f1 = f1;
            best_t = t;
        }
    }
    Ok((best_t, curve))
}

/// Writes a calibration curve as `threshold,f1` CSV.
pub fn write_f1_curve(path: &Path, curve: &[(f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    let io_err = |source: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    w.write_record(["threshold", "f1"]).map_err(io_err)?;
    for &(t, f1) in curve {
        w.write_record([t.to_string(), f1.to_string()]).map_err(io_err)?;
    }
    w.flush().map_err(|source| Error::IoFailure {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}

/// Outcome of the majority rule for one site polygon.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SiteOutcome {
    pub name: Option<String>,
    pub cocoa_truth: bool,
    pub cocoa_pred: bool,
    pub valid_pixels: usize,
    pub pixels_above: usize,
}

/// Site-level evaluation: per-site outcomes, the indices of sites
/// skipped for lack of valid pixels, and aggregate metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SiteEvaluation {
    pub outcomes: Vec<SiteOutcome>,
    pub skipped: Vec<usize>,
    pub report: EvalReport,
}

/// Classifies each site as cocoa iff strictly more than half of its
/// valid pixels exceed `t`, then scores against the site labels.
/// Sites with zero valid pixels are skipped and reported.
pub fn evaluate_polygons(
    conf: &ConfidenceMap,
    sites: &[LabelPolygon],
    t: f64,
) -> Result<SiteEvaluation> {
    if sites.is_empty() {
        return Err(Error::EmptyInput("site polygons"));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!(
            "threshold {t} outside [0, 1]"
        )));
    }
    let src = conf.raster();
    let (w, h) = (src.width(), src.height());
    let values = conf.confidence();
    let nodata = conf.nodata();
    let t32 = t as f32;
    let mut outcomes = Vec::new();
    let mut skipped = Vec::new();
    let mut cm = ConfusionMatrix::default();
    for (index, site) in sites.iter().enumerate() {
        let inside = polygon_mask(site, w, h, src.geo())?;
        let mut valid = 0usize;
        let mut above = 0usize;
        for (i, &hit) in inside.iter().enumerate() {
            if !hit || f64::from(values[i]) == nodata {
                continue;
            }
            valid += 1;
            if values[i] > t32 {
                above += 1;
            }
        }
        if valid == 0 {
            skipped.push(index);
            continue;
        }
        let truth_pos = site.class == COCOA_CLASS;
        let pred_pos = 2 * above > valid;
        cm.record(truth_pos, pred_pos);
        outcomes.push(SiteOutcome {
            name: site.name.clone(),
            cocoa_truth: truth_pos,
            cocoa_pred: pred_pos,
            valid_pixels: valid,
            pixels_above: above,
        });
    }
    if outcomes.is_empty() {
        return Err(Error::EmptyMask("every site lacked valid pixels"));
    }
    let mut report = metrics(&cm);
    report.threshold = Some(t);
    Ok(SiteEvaluation {
        outcomes,
        skipped,
        report,
    })
}
