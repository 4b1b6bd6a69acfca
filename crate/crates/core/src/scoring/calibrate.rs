//! Percentile calibration against held-out normal scores, and fusion of a
//! per-image score set into one anomaly score.
//!
//! Raw task scores live on incomparable scales (negated softmax mass,
//! mixture NLLs), so each is first replaced by its percentile rank among
//! scores the task produced on held-out normal images. Percentiles are
//! commensurable and an order statistic over them is meaningful.

use super::ood::{OodScore, TaskId};
use crate::{CoreError, Result};
use std::collections::BTreeMap;

/// A table whose spread is at or below this (relative to its magnitude)
/// ranks nothing: every query lands on the same midrank. Such tasks are
/// dropped from fusion; e.g. tint scores on fully grayscale data are all
/// exactly zero, and their pinned percentile would otherwise dominate the
/// fused order statistic.
const DEGENERATE_SPREAD: f64 = 1e-9;

/// Sorted held-out normal scores per task.
#[derive(Debug, Clone, Default)]
pub struct CalibrationTable {
    tables: BTreeMap<TaskId, Vec<f64>>,
}

impl CalibrationTable {
    pub fn new() -> CalibrationTable {
        CalibrationTable::default()
    }

    /// Stores one task's held-out scores (sorted internally).
    pub fn insert(&mut self, task: TaskId, mut scores: Vec<f64>) -> Result<()> {
        if scores.is_empty() {
            return Err(CoreError::EmptyInput(format!(
                "empty calibration set for task {task}"
            )));
        }
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::Data(format!(
                "non-finite calibration score for task {task}"
            )));
        }
        scores.sort_by(f64::total_cmp);
        self.tables.insert(task, scores);
        Ok(())
    }

    pub fn tasks(&self) -> impl Iterator<Item = TaskId> + '_ {
        self.tables.keys().cloned()
    }

    pub fn table(&self, task: TaskId) -> Option<&[f64]> {
        self.tables.get(&task).map(|v| v.as_slice())
    }

    /// Right-tail percentile of `raw` among the task's held-out scores,
    /// with midrank tie handling: (#below + #equal / 2) / N.
    pub fn percentile(&self, task: TaskId, raw: f64) -> Result<f64> {
        let table = self
            .tables
            .get(&task)
            .ok_or_else(|| CoreError::MissingCalibration(task.to_string()))?;
        let below = table.partition_point(|&v| v < raw);
        let not_above = table.partition_point(|&v| v <= raw);
        let equal = not_above - below;
        Ok((below as f64 + 0.5 * equal as f64) / table.len() as f64)
    }

    /// True if the task's held-out scores are all (numerically) identical.
    pub fn is_degenerate(&self, task: TaskId) -> Result<bool> {
        let table = self
            .tables
            .get(&task)
            .ok_or_else(|| CoreError::MissingCalibration(task.to_string()))?;
        let lo = table[0];
        let hi = table[table.len() - 1];
        Ok(hi - lo <= DEGENERATE_SPREAD * hi.abs().max(lo.abs()).max(1.0))
    }
}

/// Percentile rank of one raw score in `[0, 1]`.
pub fn calibrate(table: &CalibrationTable, score: &OodScore) -> Result<f64> {
    table.percentile(score.task_id, score.value)
}

/// Order statistic used to fuse calibrated scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FusionMethod {
    Mean,
    #[default]
    Median,
    P25,
}

impl FusionMethod {
    pub const ALL: [FusionMethod; 3] = [FusionMethod::Mean, FusionMethod::Median, FusionMethod::P25];

    pub fn as_str(&self) -> &'static str {
        match self {
            FusionMethod::Mean => "mean",
            FusionMethod::Median => "median",
            FusionMethod::P25 => "p25",
        }
    }
}

impl std::fmt::Display for FusionMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FusionMethod {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<FusionMethod> {
        FusionMethod::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| CoreError::Config(format!("unknown fusion method {s:?}")))
    }
}

/// Fuses calibrated scores with the chosen order statistic.
pub fn fuse(scores: &[f64], method: FusionMethod) -> Result<f64> {
    if scores.is_empty() {
        return Err(CoreError::EmptyInput("fusing an empty score set".into()));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::Data("non-finite score in fusion".into()));
    }
    match method {
        FusionMethod::Mean => Ok(scores.iter().sum::<f64>() / scores.len() as f64),
        FusionMethod::Median => Ok(quantile_sorted(&sorted(scores), 0.5)),
        FusionMethod::P25 => Ok(quantile_sorted(&sorted(scores), 0.25)),
    }
}

/// Calibrates a full per-image score set and fuses it, dropping tasks with
/// degenerate calibration tables.
pub fn calibrate_and_fuse(
    table: &CalibrationTable,
    scores: &[OodScore],
    method: FusionMethod,
) -> Result<f64> {
    let mut calibrated = Vec::with_capacity(scores.len());
    for s in scores {
        if table.is_degenerate(s.task_id)? {
            continue;
        }
        calibrated.push(calibrate(table, s)?);
    }
    if calibrated.is_empty() {
        return Err(CoreError::EmptyInput(
            "every task's calibration table is degenerate".into(),
        ));
    }
    fuse(&calibrated, method)
}

fn sorted(scores: &[f64]) -> Vec<f64> {
    let mut v = scores.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Linear-interpolation quantile: rank h = (n - 1) q between order statistics.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = lo.min(n - 2) + 1;
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}
