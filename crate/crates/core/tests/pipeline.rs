//! End-to-end pipeline behavior: training, scoring, persistence, evaluation.

use multicue_core::eval::{auroc, EvaluationReport, LabeledScores};
use multicue_core::image::Image;
use multicue_core::network::Backbone;
use multicue_core::pipeline::{
    evaluate, inspect_checkpoint, load_checkpoint, parse_fused_csv, parse_scores_csv,
    run_one_vs_all, save_checkpoint, score_image, synthetic_color_dataset, train, KChoice,
    LoadedData, LoadedDataset, PuzzleOod, RunConfig, TrainedModel,
};
use multicue_core::scoring::TaskId;
use multicue_core::CoreError;

/// Small but complete configuration: 2x2 puzzle on 16x16 images, one mixture
/// component, three inference permutations, two epochs.
fn smoke_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.n_w = 2;
    cfg.n_h = 2;
    cfg.margin_fraction = 0.0;
    cfg.c = 4;
    cfg.alpha = 2;
    cfg.k = KChoice::Fixed(1);
    cfg.n_sp = 3;
    cfg.backbone = Backbone::Tiny;
    cfg.batch_size = 4;
    cfg.epochs = 2;
    // Desk-scale runs need a gentler peak step than the full-size default.
    cfg.lr_max = 0.01;
    cfg.seed = 7;
    cfg.calibration_fraction = 0.25;
    cfg.resize = 16;
    cfg
}

fn smoke_data(seed: u64) -> LoadedDataset {
    synthetic_color_dataset(8, 4, 16, seed).unwrap()
}

fn train_smoke(cfg: &RunConfig, data: &LoadedDataset, class: usize) -> TrainedModel {
    train(cfg, &data.into(), class).unwrap()
}

/// Same interpolation convention the fusion code documents: h = (n-1) q.
fn quantile_oracle(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - h.floor()) * (v[hi] - v[lo])
}

#[test]
fn training_scoring_and_checkpoints_agree_end_to_end() {
    let cfg = smoke_config();
    let data = smoke_data(11);
    let mut model = train_smoke(&cfg, &data, 0);
    assert_eq!(model.k, 1);
    assert_eq!(model.train_log.len(), cfg.epochs);

    // One score row per inference permutation, per tint rotation, plus one
    // colorization row, in that order.
    let (probe_id, probe) = &data.test[0][0];
    let scores = score_image(&mut model, probe_id, probe).unwrap();
    let n = cfg.n_w * cfg.n_h;
    assert_eq!(scores.rows.len(), cfg.n_sp + n + 1);
    for (i, row) in scores.rows.iter().enumerate() {
        let (task, sub) = if i < cfg.n_sp {
            (TaskId::PuzzlePiece, i)
        } else if i < cfg.n_sp + n {
            (TaskId::Tint, i - cfg.n_sp)
        } else {
            (TaskId::Colorization, 0)
        };
        assert_eq!((row.task, row.sub_index), (task, sub), "row {i}");
        assert!(row.raw.is_finite() && row.calibrated.is_finite());
        assert!((0.0..=1.0).contains(&row.calibrated));
    }

    // Scoring is a pure function of (model, image).
    let again = score_image(&mut model, probe_id, probe).unwrap();
    assert_eq!(scores, again);

    // Persistence round trip reproduces scores bit for bit.
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(&model, dir.path()).unwrap();
    let mut reloaded = load_checkpoint(dir.path()).unwrap();
    assert_eq!(reloaded.k, model.k);
    assert_eq!(reloaded.normal_class, model.normal_class);
    let replayed = score_image(&mut reloaded, probe_id, probe).unwrap();
    assert_eq!(scores.fused.to_bits(), replayed.fused.to_bits());
    assert_eq!(scores, replayed);

    let summary = inspect_checkpoint(dir.path()).unwrap();
    assert!(summary.contains("normal_class blue"), "{summary}");
    assert!(summary.contains("config_hash"), "{summary}");

    // Anomalous test images score higher on average than normal ones.
    let mean_fused = |items: &[(String, Image)], model: &mut TrainedModel| {
        let total: f64 = items
            .iter()
            .map(|(id, img)| score_image(model, id, img).unwrap().fused)
            .sum();
        total / items.len() as f64
    };
    let normal_mean = mean_fused(&data.test[0], &mut model);
    let anomaly_mean = mean_fused(&data.test[1], &mut model);
    assert!(
        anomaly_mean > normal_mean,
        "fused means: normal {normal_mean}, anomaly {anomaly_mean}"
    );
}

#[test]
fn exported_csv_rows_reaggregate_to_the_fused_score() {
    let cfg = smoke_config();
    let data = smoke_data(13);
    let mut model = train_smoke(&cfg, &data, 0);
    let items: Vec<(String, Image)> = data.test[0]
        .iter()
        .chain(&data.test[1])
        .cloned()
        .collect();
    let scored = multicue_core::pipeline::score_images(&mut model, &items).unwrap();
    let scores_text = multicue_core::pipeline::scores_csv(&scored);
    let fused_text = multicue_core::pipeline::fused_csv(&scored);
    assert!(scores_text.starts_with("image_id,task_id,sub_index,raw,calibrated\n"));
    assert!(fused_text.starts_with("image_id,anomaly_score\n"));

    let rows = parse_scores_csv(&scores_text).unwrap();
    let fused = parse_fused_csv(&fused_text).unwrap();
    assert_eq!(rows.len(), items.len() * (cfg.n_sp + cfg.n_w * cfg.n_h + 1));
    assert_eq!(fused.len(), items.len());
    for (id, expected) in &fused {
        let calibrated: Vec<f64> = rows
            .iter()
            .filter(|(rid, ..)| rid == id)
            .map(|&(.., c)| c)
            .collect();
        let recomputed = quantile_oracle(&calibrated, 0.5);
        assert!(
            (recomputed - expected).abs() < 1e-12,
            "{id}: median of calibrated rows {recomputed} vs fused {expected}"
        );
    }
}

#[test]
fn discriminative_loss_trend_is_non_increasing_under_smoothing() {
    let mut cfg = smoke_config();
    cfg.batch_size = 2;
    cfg.epochs = 7;
    let data = smoke_data(17);
    let model = train_smoke(&cfg, &data, 0);
    // 6 fit images / batch 2 = 3 steps per epoch.
    assert!(model.step_log.len() >= 20, "{} steps", model.step_log.len());
    let window = 10;
    let first: f64 = model.step_log[..window].iter().sum::<f64>() / window as f64;
    let last: f64 =
        model.step_log[model.step_log.len() - window..].iter().sum::<f64>() / window as f64;
    assert!(
        last <= first,
        "smoothed loss rose: first window {first}, last window {last}"
    );
}

#[test]
fn mixture_size_selection_collapses_on_monochrome_data() {
    let gray = |i: u64| {
        let v = 120.0 + (i % 3) as f64;
        Image::solid_rgb(16, 16, [v, v, v])
    };
    let names = vec!["gray".to_string()];
    let items: Vec<(String, Image)> = (0..8).map(|i| (format!("g{i}"), gray(i))).collect();
    let data = LoadedData {
        class_names: &names,
        train: vec![&items],
    };
    let mut cfg = smoke_config();
    cfg.k = KChoice::Auto { k_max: 3 };
    cfg.epochs = 1;
    let model = train(&cfg, &data, 0).unwrap();
    assert_eq!(model.k, 1);
}

#[test]
fn puzzle_only_ablation_trains_and_scores_without_color_branch() {
    let mut cfg = smoke_config();
    cfg.puzzle_only = true;
    let data = smoke_data(19);
    let mut model = train_smoke(&cfg, &data, 0);
    assert!(model.lbranch.is_none());
    assert_eq!(model.k, 1);

    let (id, img) = &data.test[1][0];
    let scores = score_image(&mut model, id, img).unwrap();
    assert_eq!(scores.rows.len(), cfg.n_sp);
    assert!(scores.rows.iter().all(|r| r.task == TaskId::PuzzlePiece));

    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(&model, dir.path()).unwrap();
    assert!(!dir.path().join("lbranch.params").exists());
    let mut reloaded = load_checkpoint(dir.path()).unwrap();
    let replayed = score_image(&mut reloaded, id, img).unwrap();
    assert_eq!(scores, replayed);
}

#[test]
fn evaluation_artifacts_are_consistent_with_the_report() {
    let cfg = smoke_config();
    let data = smoke_data(23);
    let mut model = train_smoke(&cfg, &data, 0);
    let dir = tempfile::tempdir().unwrap();
    let report = evaluate(&mut model, &data, 0.05, Some(dir.path())).unwrap();
    assert_eq!(report.per_class.len(), 1);
    assert_eq!(report.per_class[0].class_name, "red");
    assert_eq!(report.seed, cfg.seed);
    assert_eq!(report.config_hash, cfg.hash());

    // The written report parses back to the same document.
    let text = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert_eq!(EvaluationReport::from_text(&text).unwrap(), report);

    // With balanced test classes, the report AUROC is exactly recomputable
    // from the exported fused scores.
    let fused_text = std::fs::read_to_string(dir.path().join("fused.csv")).unwrap();
    let fused = parse_fused_csv(&fused_text).unwrap();
    let mut normal = Vec::new();
    let mut anomaly = Vec::new();
    for (id, score) in fused {
        let class = id.split(':').next().unwrap().to_string();
        if class == "blue" {
            normal.push(score);
        } else {
            anomaly.push(score);
        }
    }
    let labeled = LabeledScores::new(normal, anomaly).unwrap();
    assert_eq!(auroc(&labeled), report.per_class[0].metrics.auroc);

    for name in ["scores.csv", "roc.csv", "roc.png", "histogram.png"] {
        let meta = std::fs::metadata(dir.path().join(name)).unwrap();
        assert!(meta.len() > 0, "{name} is empty");
    }
}

#[test]
fn one_vs_all_aggregates_per_class_runs_and_replays_from_disk() {
    let cfg = smoke_config();
    let data = smoke_data(29);
    let root = tempfile::tempdir().unwrap();
    let outcome = run_one_vs_all(&cfg, &data, 0.05, Some(root.path())).unwrap();
    assert_eq!(outcome.per_class.len(), 2);
    assert_eq!(outcome.per_class[0].seed, cfg.seed);
    assert_eq!(outcome.per_class[1].seed, cfg.seed.wrapping_add(1));
    let mean_auroc =
        (outcome.per_class[0].mean.auroc + outcome.per_class[1].mean.auroc) / 2.0;
    assert_eq!(outcome.mean.auroc, mean_auroc);

    let aggregate = std::fs::read_to_string(root.path().join("aggregate.txt")).unwrap();
    assert!(aggregate.starts_with("aggregate_schema 1\n"), "{aggregate}");
    assert!(aggregate.contains("class blue "), "{aggregate}");
    assert!(aggregate.contains("class red "), "{aggregate}");
    assert!(aggregate.contains("\nmean auroc "), "{aggregate}");

    // Replaying one class from its stored checkpoint reproduces the stored
    // report exactly.
    let class_dir = root.path().join("class_red");
    let mut reloaded = load_checkpoint(&class_dir.join("checkpoint")).unwrap();
    assert_eq!(reloaded.config.seed, cfg.seed.wrapping_add(1));
    let replayed = evaluate(&mut reloaded, &data, 0.05, None).unwrap();
    let stored = std::fs::read_to_string(class_dir.join("report.txt")).unwrap();
    assert_eq!(replayed.to_text(), stored);
}

#[test]
fn one_vs_all_failure_preserves_completed_class_results() {
    let data = smoke_data(31);
    // Class 1 keeps a single training image, too few to spare a calibration
    // holdout, so its run must fail after class 0 completed.
    let starved = LoadedDataset {
        class_names: data.class_names.clone(),
        train: vec![data.train[0].clone(), data.train[1][..1].to_vec()],
        test: data.test.clone(),
    };
    let cfg = smoke_config();
    let root = tempfile::tempdir().unwrap();
    let err = run_one_vs_all(&cfg, &starved, 0.05, Some(root.path())).unwrap_err();
    assert!(matches!(err, CoreError::Data(_)), "{err}");
    assert!(root.path().join("class_blue/report.txt").exists());
    assert!(root.path().join("class_blue/checkpoint/config.txt").exists());
    assert!(!root.path().join("aggregate.txt").exists());
}

#[test]
fn position_statistics_persist_and_their_absence_fails_closed() {
    let mut cfg = smoke_config();
    cfg.puzzle_ood = PuzzleOod::Mahalanobis;
    let data = smoke_data(37);
    let mut model = train_smoke(&cfg, &data, 0);
    assert!(model.class_stats.is_some());

    let (id, img) = &data.test[0][1];
    let scores = score_image(&mut model, id, img).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(&model, dir.path()).unwrap();
    let mut reloaded = load_checkpoint(dir.path()).unwrap();
    let replayed = score_image(&mut reloaded, id, img).unwrap();
    assert_eq!(scores, replayed);

    // A checkpoint that claims Mahalanobis scoring but lost its fitted
    // statistics must refuse to score rather than silently degrade.
    std::fs::remove_file(dir.path().join("class_stats.txt")).unwrap();
    let mut crippled = load_checkpoint(dir.path()).unwrap();
    let err = score_image(&mut crippled, id, img).unwrap_err();
    assert!(matches!(err, CoreError::Checkpoint(_)), "{err}");
    assert_eq!(err.exit_code(), 4);
}
