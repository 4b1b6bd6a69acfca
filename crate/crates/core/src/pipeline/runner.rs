//! End-to-end drivers: evaluate a trained model against a labeled test set,
//! and run the full protocol that takes each class in turn as the normal
//! class.

use super::checkpoint::save_checkpoint;
use super::config::RunConfig;
use super::dataset::LoadedDataset;
use super::plot::{histogram_png, roc_plot_png};
use super::scorer::{fused_csv, score_image, scores_csv, ImageScore};
use super::trainer::{train, TrainedModel};
use crate::eval::{one_vs_all_run, roc_csv, roc_points, EvaluationReport, LabeledScores, MetricBlock};
use crate::{CoreError, Result};
use std::fmt::Write as _;
use std::path::Path;

/// Score every test image of every class. Emitted image ids are prefixed
/// `class_name:` so exported CSVs remain attributable per class.
fn score_test_split(model: &mut TrainedModel, data: &LoadedDataset) -> Result<Vec<Vec<ImageScore>>> {
    let mut per_class = Vec::with_capacity(data.class_names.len());
    for (class, items) in data.class_names.iter().zip(&data.test) {
        let mut scored = Vec::with_capacity(items.len());
        for (id, img) in items {
            scored.push(score_image(model, &format!("{class}:{id}"), img)?);
        }
        per_class.push(scored);
    }
    Ok(per_class)
}

/// Evaluate `model` on the test split of `data`, treating the model's
/// training class as normal and every other class as anomalous.
///
/// Metrics use equal per-anomalous-class subsampling; the exported CSVs
/// contain every scored test image, so with balanced test classes the
/// report is exactly recomputable from them. When `out_dir` is given,
/// writes `report.txt`, `scores.csv`, `fused.csv`, `roc.csv`, `roc.png`,
/// and `histogram.png` (the ROC and histogram pool all anomalous classes).
pub fn evaluate(
    model: &mut TrainedModel,
    data: &LoadedDataset,
    bpcer_level: f64,
    out_dir: Option<&Path>,
) -> Result<EvaluationReport> {
    let normal_class = data.class_index(&model.normal_class).ok_or_else(|| {
        CoreError::Data(format!(
            "test data has no class named {:?}",
            model.normal_class
        ))
    })?;
    let scored = score_test_split(model, data)?;
    let fused: Vec<Vec<f64>> = scored
        .iter()
        .map(|items| items.iter().map(|s| s.fused).collect())
        .collect();
    let report = one_vs_all_run(
        &data.class_names,
        normal_class,
        || Ok(fused.clone()),
        |per_class, class| Ok(per_class[class].clone()),
        model.config.seed,
        bpcer_level,
        &model.config.hash(),
    )?;

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        let flat: Vec<ImageScore> = scored.iter().flatten().cloned().collect();
        std::fs::write(dir.join("report.txt"), report.to_text())?;
        std::fs::write(dir.join("scores.csv"), scores_csv(&flat))?;
        std::fs::write(dir.join("fused.csv"), fused_csv(&flat))?;
        let normal_scores = fused[normal_class].clone();
        let anomaly_scores: Vec<f64> = fused
            .iter()
            .enumerate()
            .filter(|(c, _)| *c != normal_class)
            .flat_map(|(_, v)| v.iter().copied())
            .collect();
        let labeled = LabeledScores::new(normal_scores.clone(), anomaly_scores.clone())?;
        std::fs::write(dir.join("roc.csv"), roc_csv(&labeled))?;
        roc_plot_png(&roc_points(&labeled), &dir.join("roc.png"))?;
        histogram_png(&normal_scores, &anomaly_scores, &dir.join("histogram.png"))?;
    }
    Ok(report)
}

/// Outcome of the full protocol: one report per normal class plus the mean
/// over classes of the per-report mean metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct OneVsAllOutcome {
    pub per_class: Vec<EvaluationReport>,
    pub mean: MetricBlock,
}

impl OneVsAllOutcome {
    pub fn to_text(&self, class_names: &[String], bpcer_level: f64) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "aggregate_schema 1");
        let _ = writeln!(out, "bpcer_level {bpcer_level}");
        let _ = writeln!(out, "classes {}", self.per_class.len());
        for (name, report) in class_names.iter().zip(&self.per_class) {
            let m = &report.mean;
            let _ = writeln!(
                out,
                "class {name} seed {} auroc {} eer {} apcer_at_bpcer {}",
                report.seed, m.auroc, m.eer, m.apcer_at_bpcer
            );
        }
        let _ = writeln!(
            out,
            "mean auroc {} eer {} apcer_at_bpcer {}",
            self.mean.auroc, self.mean.eer, self.mean.apcer_at_bpcer
        );
        out
    }
}

/// Train and evaluate once per class, each run with its own derived seed
/// (base seed + class index, recorded in the report for replay). Artifacts
/// are written per class as runs complete, so a failure in a later class
/// leaves earlier results on disk.
pub fn run_one_vs_all(
    config: &RunConfig,
    data: &LoadedDataset,
    bpcer_level: f64,
    out_root: Option<&Path>,
) -> Result<OneVsAllOutcome> {
    config.validate()?;
    if data.class_names.len() < 2 {
        return Err(CoreError::SingleClass);
    }
    let mut per_class = Vec::with_capacity(data.class_names.len());
    for (i, name) in data.class_names.iter().enumerate() {
        let mut run_config = config.clone();
        run_config.seed = config.seed.wrapping_add(i as u64);
        let mut model = train(&run_config, &data.into(), i)?;
        let class_dir = out_root.map(|root| root.join(format!("class_{name}")));
        if let Some(dir) = &class_dir {
            save_checkpoint(&model, &dir.join("checkpoint"))?;
        }
        let report = evaluate(&mut model, data, bpcer_level, class_dir.as_deref())?;
        per_class.push(report);
    }
    let count = per_class.len() as f64;
    let mean = MetricBlock {
        auroc: per_class.iter().map(|r| r.mean.auroc).sum::<f64>() / count,
        eer: per_class.iter().map(|r| r.mean.eer).sum::<f64>() / count,
        apcer_at_bpcer: per_class.iter().map(|r| r.mean.apcer_at_bpcer).sum::<f64>() / count,
    };
    let outcome = OneVsAllOutcome { per_class, mean };
    if let Some(root) = out_root {
        std::fs::create_dir_all(root)?;
        std::fs::write(
            root.join("aggregate.txt"),
            outcome.to_text(&data.class_names, bpcer_level),
        )?;
    }
    Ok(outcome)
}
