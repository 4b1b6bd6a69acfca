//! Score types and per-sample out-of-distribution functions.
//!
//! Every score is oriented "higher = more anomalous" at construction:
//! likelihood-like raw quantities (softmax probabilities, densities) are
//! negated, distance-like quantities are kept as-is. One orientation keeps
//! fusion and the downstream metrics free of per-task special cases.

use crate::{CoreError, Result};
use ndarray::{Array1, Array2};
use std::collections::BTreeMap;

/// Pretext task that produced a score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TaskId {
    PuzzlePiece,
    Tint,
    Colorization,
}

impl TaskId {
    pub const ALL: [TaskId; 3] = [TaskId::PuzzlePiece, TaskId::Tint, TaskId::Colorization];

    /// Stable name used in CSV exports and checkpoints.
    pub fn as_str(&self) -> &'static str {
        match self {
            TaskId::PuzzlePiece => "puzzle_piece",
            TaskId::Tint => "tint",
            TaskId::Colorization => "colorization",
        }
    }
}

impl std::fmt::Display for TaskId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TaskId {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<TaskId> {
        TaskId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| CoreError::Data(format!("unknown task id {s:?}")))
    }
}

/// One raw anomaly score for one sub-task instance.
///
/// `sub_index` identifies the instance within the task: the sampled
/// permutation for the puzzle task, the piece for the tint task, 0 for the
/// single colorization score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OodScore {
    /// Higher = more anomalous.
    pub value: f64,
    pub task_id: TaskId,
    pub sub_index: usize,
}

impl OodScore {
    pub fn new(value: f64, task_id: TaskId, sub_index: usize) -> Result<OodScore> {
        if !value.is_finite() {
            return Err(CoreError::Data(format!(
                "non-finite {task_id} score at sub-index {sub_index}"
            )));
        }
        Ok(OodScore {
            value,
            task_id,
            sub_index,
        })
    }
}

/// Numerically stable softmax of a logit slice.
pub fn softmax_vec(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Softmax probability assigned to the true label, negated so that a worse
/// fit scores higher.
pub fn softmax_truth(
    logits: &[f64],
    y: usize,
    task_id: TaskId,
    sub_index: usize,
) -> Result<OodScore> {
    if logits.is_empty() {
        return Err(CoreError::EmptyInput("softmax truth on empty logits".into()));
    }
    if y >= logits.len() {
        return Err(CoreError::UnknownLabel(y));
    }
    OodScore::new(-softmax_vec(logits)[y], task_id, sub_index)
}

/// Relative ridge added to each fitted covariance diagonal.
pub const COVARIANCE_RIDGE_SCALE: f64 = 1e-4;

/// Absolute ridge floor so zero-variance classes still factorize.
const RIDGE_FLOOR: f64 = 1e-12;

/// Gaussian fitted over one class's score vectors.
#[derive(Debug, Clone)]
pub struct ClassGaussian {
    pub mean: Array1<f64>,
    /// Ridged covariance; symmetric positive definite.
    pub covariance: Array2<f64>,
    pub count: usize,
    /// Cached lower Cholesky factor of `covariance`.
    chol: Array2<f64>,
}

/// Per-class means and covariances over a common score-vector space.
#[derive(Debug, Clone)]
pub struct ClassStats {
    dim: usize,
    classes: BTreeMap<usize, ClassGaussian>,
}

impl ClassStats {
    pub fn new(dim: usize) -> Result<ClassStats> {
        if dim == 0 {
            return Err(CoreError::EmptyInput("zero-dimensional score space".into()));
        }
        Ok(ClassStats {
            dim,
            classes: BTreeMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> Vec<usize> {
        self.classes.keys().cloned().collect()
    }

    pub fn class(&self, label: usize) -> Option<&ClassGaussian> {
        self.classes.get(&label)
    }

    /// Registers a class from pre-computed statistics. The covariance is
    /// used as given (assumed already ridged) and must be symmetric
    /// positive definite.
    pub fn insert_class(
        &mut self,
        label: usize,
        mean: Array1<f64>,
        covariance: Array2<f64>,
        count: usize,
    ) -> Result<()> {
        if mean.len() != self.dim || covariance.shape() != [self.dim, self.dim] {
            return Err(CoreError::ShapeMismatch(format!(
                "class {label}: mean {} / covariance {:?} vs dim {}",
                mean.len(),
                covariance.shape(),
                self.dim
            )));
        }
        if count < 2 {
            return Err(CoreError::TooFewSamples(label.to_string()));
        }
        for i in 0..self.dim {
            for j in 0..i {
                if (covariance[[i, j]] - covariance[[j, i]]).abs() > 1e-9 {
                    return Err(CoreError::Data(format!(
                        "class {label}: covariance not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let chol = cholesky_lower(&covariance)?;
        self.classes.insert(
            label,
            ClassGaussian {
                mean,
                covariance,
                count,
                chol,
            },
        );
        Ok(())
    }

    /// Squared Mahalanobis distance of `v` to class `y`.
    pub fn mahalanobis_sq(&self, v: &[f64], y: usize) -> Result<f64> {
        let class = self.classes.get(&y).ok_or(CoreError::UnknownLabel(y))?;
        if v.len() != self.dim {
            return Err(CoreError::ShapeMismatch(format!(
                "score vector length {} vs dim {}",
                v.len(),
                self.dim
            )));
        }
        let centered: Vec<f64> = v
            .iter()
            .zip(class.mean.iter())
            .map(|(a, b)| a - b)
            .collect();
        let w = forward_substitute(&class.chol, &centered);
        Ok(w.iter().map(|x| x * x).sum())
    }
}

/// Fits per-class mean and population covariance over score vectors
/// (one row per sample), adding a relative ridge to the diagonal.
pub fn fit_class_stats(vectors: &Array2<f64>, labels: &[usize]) -> Result<ClassStats> {
    let (n, dim) = (vectors.nrows(), vectors.ncols());
    if n == 0 || dim == 0 {
        return Err(CoreError::EmptyInput("no score vectors to fit".into()));
    }
    if labels.len() != n {
        return Err(CoreError::ShapeMismatch(format!(
            "{n} vectors vs {} labels",
            labels.len()
        )));
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (row, &label) in labels.iter().enumerate() {
        groups.entry(label).or_default().push(row);
    }
    let mut stats = ClassStats::new(dim)?;
    for (label, rows) in groups {
        let count = rows.len();
        if count < 2 {
            return Err(CoreError::TooFewSamples(label.to_string()));
        }
        let mut mean = Array1::<f64>::zeros(dim);
        for &r in &rows {
            mean += &vectors.row(r);
        }
        mean /= count as f64;
        let mut cov = Array2::<f64>::zeros((dim, dim));
        for &r in &rows {
            let centered = &vectors.row(r) - &mean;
            for i in 0..dim {
                for j in 0..=i {
                    cov[[i, j]] += centered[i] * centered[j];
                }
            }
        }
        // Population (1/N) convention; mirror the lower triangle so the
        // stored matrix is exactly symmetric.
        for i in 0..dim {
            for j in 0..=i {
                cov[[i, j]] /= count as f64;
                cov[[j, i]] = cov[[i, j]];
            }
        }
        let trace: f64 = (0..dim).map(|i| cov[[i, i]]).sum();
        let ridge = (COVARIANCE_RIDGE_SCALE * trace / dim as f64).max(RIDGE_FLOOR);
        for i in 0..dim {
            cov[[i, i]] += ridge;
        }
        stats.insert_class(label, mean, cov, count)?;
    }
    Ok(stats)
}

/// Squared Mahalanobis distance to the true label's class, wrapped as a
/// score (distances already grow with anomaly, so no negation).
pub fn mahalanobis_ood(
    v: &[f64],
    y: usize,
    stats: &ClassStats,
    task_id: TaskId,
    sub_index: usize,
) -> Result<OodScore> {
    OodScore::new(stats.mahalanobis_sq(v, y)?, task_id, sub_index)
}

/// Per-head OOD function used by the task-level scores.
#[derive(Debug, Clone, Copy)]
pub enum OodMethod<'a> {
    /// Negated softmax probability of the true label.
    SoftmaxTruth,
    /// Squared Mahalanobis distance of the softmax response vector to the
    /// true label's fitted class statistics.
    Mahalanobis(&'a ClassStats),
}

impl OodMethod<'_> {
    /// Oriented raw score for one classification head.
    pub fn raw(&self, logits: &[f64], y: usize) -> Result<f64> {
        if logits.is_empty() {
            return Err(CoreError::EmptyInput("ood on empty logits".into()));
        }
        if y >= logits.len() {
            return Err(CoreError::UnknownLabel(y));
        }
        match self {
            OodMethod::SoftmaxTruth => Ok(-softmax_vec(logits)[y]),
            OodMethod::Mahalanobis(stats) => stats.mahalanobis_sq(&softmax_vec(logits), y),
        }
    }
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
fn cholesky_lower(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(CoreError::Data(format!(
                        "covariance not positive definite at pivot {i}"
                    )));
                }
                l[[i, j]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    Ok(l)
}

/// Solves `L w = b` for a lower-triangular `L`.
fn forward_substitute(l: &Array2<f64>, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * w[k];
        }
        w[i] = s / l[[i, i]];
    }
    w
}
