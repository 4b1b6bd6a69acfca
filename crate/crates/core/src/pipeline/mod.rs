//! End-to-end training and scoring pipeline.
//!
//! Ties the other modules together: datasets are loaded into memory,
//! a two-branch model is trained on one designated normal class, raw
//! task scores are calibrated against held-out normal images, and fused
//! anomaly scores feed the evaluation protocol. Checkpoints persist the
//! whole trained state (weights, config, inference permutations,
//! calibration tables, optional position statistics) so a scoring or
//! evaluation run is exactly reproducible from disk.

pub mod checkpoint;
pub mod config;
pub mod dataset;
mod inputs;
pub mod plot;
pub mod runner;
pub mod scorer;
pub mod trainer;

pub use checkpoint::{
    inspect_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_SCHEMA_VERSION,
};
pub use config::{
    backbone_as_str, backbone_from_str, KChoice, PuzzleOod, RunConfig, CONFIG_SCHEMA_VERSION,
};
pub use dataset::{
    decode_image_file, fashion_mnist_dir, load_dataset, load_images_path,
    synthetic_color_dataset, DatasetDescriptor, DatasetSource, LoadedDataset,
};
pub use plot::{histogram_png, roc_plot_png};
pub use runner::{evaluate, run_one_vs_all, OneVsAllOutcome};
pub use scorer::{
    fused_csv, parse_fused_csv, parse_scores_csv, raw_scores, score_image, score_images,
    scores_csv, ImageScore, ScoreRow, FUSED_CSV_HEADER, SCORES_CSV_HEADER,
};
pub use trainer::{train, EpochLog, LoadedData, TrainedModel};
