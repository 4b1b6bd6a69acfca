//! Command-line driver for the multicue anomaly detection toolkit.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error,
//! 4 checkpoint error, 1 anything else.

use clap::{Args, Parser, Subcommand};
use multicue_core::network::Backbone;
use multicue_core::pipeline::{
    backbone_from_str, evaluate, fashion_mnist_dir, fused_csv, inspect_checkpoint,
    load_checkpoint, load_dataset, load_images_path, run_one_vs_all, save_checkpoint,
    score_images, scores_csv, train, DatasetDescriptor, DatasetSource, KChoice, PuzzleOod,
    RunConfig,
};
use multicue_core::scoring::FusionMethod;
use multicue_core::{CoreError, Result};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "multicue", version, about = "Self-supervised multi-cue anomaly detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on one normal class and write a checkpoint.
    Train(TrainArgs),
    /// Score images with a trained checkpoint.
    Score(ScoreArgs),
    /// Evaluate a checkpoint against a labeled test set.
    Evaluate(EvaluateArgs),
    /// Train and evaluate once per class, treating each as normal in turn.
    OneVsAll(OneVsAllArgs),
    /// Print a summary of a stored checkpoint.
    InspectCheckpoint(InspectArgs),
}

fn parse_k(s: &str) -> std::result::Result<KChoice, String> {
    s.parse().map_err(|e: CoreError| e.to_string())
}

fn parse_backbone(s: &str) -> std::result::Result<Backbone, String> {
    backbone_from_str(s).map_err(|e| e.to_string())
}

fn parse_fusion(s: &str) -> std::result::Result<FusionMethod, String> {
    s.parse().map_err(|e: CoreError| e.to_string())
}

fn parse_puzzle_ood(s: &str) -> std::result::Result<PuzzleOod, String> {
    s.parse().map_err(|e: CoreError| e.to_string())
}

/// Run configuration: an optional config file plus per-field overrides.
#[derive(Args)]
struct ConfigArgs {
    /// Key-value config file; explicit flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Puzzle grid columns.
    #[arg(long)]
    n_w: Option<usize>,
    /// Puzzle grid rows.
    #[arg(long)]
    n_h: Option<usize>,
    /// Margin discarded around each puzzle piece, as a fraction of piece size.
    #[arg(long)]
    margin_fraction: Option<f64>,
    /// Number of tint rotation angles.
    #[arg(long)]
    c: Option<usize>,
    /// Color border width (pixels) kept by the colorization task.
    #[arg(long)]
    alpha: Option<usize>,
    /// Mixture size: an integer, "auto", or "auto:<k_max>".
    #[arg(long, value_parser = parse_k)]
    k: Option<KChoice>,
    /// Number of fixed inference permutations.
    #[arg(long)]
    n_sp: Option<usize>,
    /// Encoder backbone: "tiny" or "wide16x4".
    #[arg(long, value_parser = parse_backbone)]
    backbone: Option<Backbone>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr_max: Option<f64>,
    #[arg(long)]
    lr_min: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fusion of calibrated scores: "mean", "median", or "p25".
    #[arg(long, value_parser = parse_fusion)]
    fusion: Option<FusionMethod>,
    /// Puzzle position scoring: "softmax_truth" or "mahalanobis".
    #[arg(long, value_parser = parse_puzzle_ood)]
    puzzle_ood: Option<PuzzleOod>,
    /// Fraction of training normals held out for score calibration.
    #[arg(long)]
    calibration_fraction: Option<f64>,
    /// Side length images are resized to.
    #[arg(long)]
    resize: Option<usize>,
    /// Cap on training images actually used (0 = all).
    #[arg(long)]
    train_limit: Option<usize>,
    /// Weight of the attention density penalty.
    #[arg(long)]
    lambda_density: Option<f64>,
    /// Train and score with the puzzle task only (ablation).
    #[arg(long)]
    puzzle_only: Option<bool>,
    /// Shrink backbone, permutation count and epochs for quick runs.
    #[arg(long, default_value_t = false)]
    desk_scale: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    CoreError::Config(format!("cannot read {}: {e}", path.display()))
                })?;
                RunConfig::parse(&text)?
            }
            None => RunConfig::default(),
        };
        if self.desk_scale {
            cfg.backbone = Backbone::Tiny;
            cfg.n_sp = 9;
            cfg.epochs = 5;
        }
        macro_rules! apply {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field.clone() { cfg.$field = v; })*
            };
        }
        apply!(
            n_w, n_h, margin_fraction, c, alpha, k, n_sp, backbone, dropout, batch_size,
            epochs, lr_max, lr_min, momentum, seed, fusion, puzzle_ood, calibration_fraction,
            resize, train_limit, lambda_density, puzzle_only
        );
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Dataset selection shared by the data-consuming commands.
#[derive(Args)]
struct DataArgs {
    /// Dataset: "synthetic[:<train>:<test>]", "fmnist[:<dir>]", or a
    /// directory with train/<class>/ and test/<class>/ image folders.
    #[arg(long)]
    data: String,
    /// Cap on training images loaded per class (0 = all).
    #[arg(long, default_value_t = 0)]
    max_train_per_class: usize,
    /// Cap on test images loaded per class (0 = all).
    #[arg(long, default_value_t = 0)]
    max_test_per_class: usize,
}

impl DataArgs {
    fn descriptor(&self, cfg: &RunConfig) -> Result<DatasetDescriptor> {
        let source = if self.data == "synthetic" {
            DatasetSource::Synthetic {
                per_class_train: 64,
                per_class_test: 16,
                seed: cfg.seed,
            }
        } else if let Some(rest) = self.data.strip_prefix("synthetic:") {
            let parts: Vec<&str> = rest.split(':').collect();
            let parse = |s: &str| -> Result<usize> {
                s.parse()
                    .map_err(|_| CoreError::Config(format!("bad synthetic count {s:?}")))
            };
            match parts.as_slice() {
                [t, e] => DatasetSource::Synthetic {
                    per_class_train: parse(t)?,
                    per_class_test: parse(e)?,
                    seed: cfg.seed,
                },
                _ => {
                    return Err(CoreError::Config(format!(
                        "bad data spec {:?}: expected synthetic:<train>:<test>",
                        self.data
                    )))
                }
            }
        } else if self.data == "fmnist" {
            let dir = fashion_mnist_dir().ok_or_else(|| {
                CoreError::Data(
                    "no fashion-mnist data found; set FMNIST_DIR or pass fmnist:<dir>".into(),
                )
            })?;
            DatasetSource::FashionMnist(dir)
        } else if let Some(dir) = self.data.strip_prefix("fmnist:") {
            DatasetSource::FashionMnist(PathBuf::from(dir))
        } else {
            let path = PathBuf::from(&self.data);
            if !path.is_dir() {
                return Err(CoreError::Data(format!(
                    "dataset directory {} not found",
                    path.display()
                )));
            }
            DatasetSource::Tree(path)
        };
        let mut desc = DatasetDescriptor::new(source, cfg.resize);
        desc.max_train_per_class = self.max_train_per_class;
        desc.max_test_per_class = self.max_test_per_class;
        Ok(desc)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Name of the class treated as normal.
    #[arg(long)]
    normal_class: String,
    /// Directory the checkpoint is written to.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct ScoreArgs {
    /// Checkpoint directory produced by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// One image file or a directory of images.
    #[arg(long)]
    images: PathBuf,
    /// Directory for scores.csv and fused.csv (also printed to stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Checkpoint directory produced by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// BPCER operating point for the APCER metric.
    #[arg(long, default_value_t = 0.05)]
    bpcer_level: f64,
    /// Directory for report, CSVs and plots.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OneVsAllArgs {
    #[command(flatten)]
    data: DataArgs,
    /// BPCER operating point for the APCER metric.
    #[arg(long, default_value_t = 0.05)]
    bpcer_level: f64,
    /// Root directory for per-class checkpoints, reports and plots.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct InspectArgs {
    /// Checkpoint directory to summarize.
    checkpoint: PathBuf,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let cfg = args.config.resolve()?;
            let data = load_dataset(&args.data.descriptor(&cfg)?)?;
            let class = data.class_index(&args.normal_class).ok_or_else(|| {
                CoreError::Data(format!("no class named {:?} in the dataset", args.normal_class))
            })?;
            let model = train(&cfg, &(&data).into(), class)?;
            for log in &model.train_log {
                println!(
                    "epoch {} discriminative_loss {} colorization_loss {}",
                    log.epoch, log.u_loss, log.l_loss
                );
            }
            save_checkpoint(&model, &args.out)?;
            println!("checkpoint written to {}", args.out.display());
        }
        Command::Score(args) => {
            let mut model = load_checkpoint(&args.checkpoint)?;
            let items = load_images_path(&args.images)?;
            let scored = score_images(&mut model, &items)?;
            if let Some(out) = &args.out {
                std::fs::create_dir_all(out)?;
                std::fs::write(out.join("scores.csv"), scores_csv(&scored))?;
                std::fs::write(out.join("fused.csv"), fused_csv(&scored))?;
            }
            for s in &scored {
                println!("{} {}", s.image_id, s.fused);
            }
        }
        Command::Evaluate(args) => {
            let mut model = load_checkpoint(&args.checkpoint)?;
            let cfg = model.config.clone();
            let data = load_dataset(&args.data.descriptor(&cfg)?)?;
            let report = evaluate(&mut model, &data, args.bpcer_level, args.out.as_deref())?;
            print!("{}", report.to_text());
        }
        Command::OneVsAll(args) => {
            let cfg = args.config.resolve()?;
            let data = load_dataset(&args.data.descriptor(&cfg)?)?;
            let outcome = run_one_vs_all(&cfg, &data, args.bpcer_level, args.out.as_deref())?;
            print!("{}", outcome.to_text(&data.class_names, args.bpcer_level));
        }
        Command::InspectCheckpoint(args) => {
            print!("{}", inspect_checkpoint(&args.checkpoint)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code().clamp(1, 255) as u8)
        }
    }
}
