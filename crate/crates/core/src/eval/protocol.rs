//! One-vs-all protocol: one class is normal, every other class supplies
//! anomalies, metrics are reported per anomalous class and averaged.

use super::metrics::{apcer_at_bpcer, auroc, eer, LabeledScores};
use super::report::{ClassReport, EvaluationReport, MetricBlock};
use crate::{CoreError, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Trains once on the normal class, scores every class's test split, and
/// reports per-anomalous-class metrics plus their mean.
///
/// `trainer` builds the scoring model (typically by training on the normal
/// class's train split); `scorer(model, class)` returns the fused anomaly
/// scores of that class's test images. When anomalous classes are
/// imbalanced, each is subsampled (seeded) to the smallest class size so
/// the mean weighs classes equally.
pub fn one_vs_all_run<M>(
    class_names: &[String],
    normal_class: usize,
    trainer: impl FnOnce() -> Result<M>,
    scorer: impl Fn(&M, usize) -> Result<Vec<f64>>,
    seed: u64,
    bpcer_level: f64,
    config_hash: &str,
) -> Result<EvaluationReport> {
    if class_names.len() < 2 {
        return Err(CoreError::SingleClass);
    }
    if normal_class >= class_names.len() {
        return Err(CoreError::UnknownLabel(normal_class));
    }
    let model = trainer()?;
    let normal_scores = scorer(&model, normal_class)?;
    let mut anomaly_scores: Vec<(usize, Vec<f64>)> = Vec::new();
    for class in 0..class_names.len() {
        if class != normal_class {
            anomaly_scores.push((class, scorer(&model, class)?));
        }
    }
    let smallest = anomaly_scores
        .iter()
        .map(|(_, s)| s.len())
        .min()
        .unwrap_or(0);
    if smallest == 0 {
        return Err(CoreError::EmptyInput(
            "an anomalous class has no test scores".into(),
        ));
    }
    let mut per_class = Vec::with_capacity(anomaly_scores.len());
    for (class, scores) in anomaly_scores {
        let sampled = subsample(&scores, smallest, seed, class);
        let labeled = LabeledScores::new(normal_scores.clone(), sampled)?;
        per_class.push(ClassReport {
            class_name: class_names[class].clone(),
            seed,
            metrics: MetricBlock {
                auroc: auroc(&labeled),
                eer: eer(&labeled),
                apcer_at_bpcer: apcer_at_bpcer(&labeled, bpcer_level)?,
            },
        });
    }
    EvaluationReport::from_classes(seed, config_hash.to_string(), bpcer_level, per_class)
}

/// Seeded without-replacement subsample of `m` scores, order-preserving.
fn subsample(scores: &[f64], m: usize, seed: u64, class: usize) -> Vec<f64> {
    if scores.len() <= m {
        return scores.to_vec();
    }
    let mut rng =
        ChaCha8Rng::seed_from_u64(seed.wrapping_add((class as u64).wrapping_mul(0x9E3779B97F4A7C15)));
    let mut indices: Vec<usize> = (0..scores.len()).collect();
    for i in (1..indices.len()).rev() {
        indices.swap(i, rng.gen_range(0..=i));
    }
    let mut chosen = indices[..m].to_vec();
    chosen.sort_unstable();
    chosen.into_iter().map(|i| scores[i]).collect()
}
