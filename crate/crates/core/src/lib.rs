//! Self-supervised multi-cue anomaly detection.
//!
//! The toolkit trains a two-branch model on a normal-only dataset and scores
//! unseen images by how poorly the model solves its pretext tasks on them:
//!
//! * a discriminative **U-branch** solving a piece-wise jigsaw puzzle with an
//!   intra-piece tint-rotation sub-task weighted by a learned attention map,
//! * a generative **L-branch** re-colorizing an image from its luminance and
//!   an α-pixel color border, modeled as a per-pixel Gaussian mixture trained
//!   with an EM-style alternation.
//!
//! Per-task out-of-distribution scores are calibrated against held-out normal
//! samples and fused with an order statistic into one anomaly score per image
//! (higher = more anomalous). The [`eval`] module provides AUROC/EER/APCER
//! metrics and a one-vs-all protocol runner; [`pipeline`] wires everything to
//! datasets, checkpoints and the CLI.

pub mod autodiff;
pub mod error;
pub mod eval;
pub mod image;
pub mod losses;
pub mod network;
pub mod par;
pub mod pipeline;
pub mod scoring;

pub use error::CoreError;

/// Convenience result alias used across the crate.
pub type Result<T> = std::result::Result<T, CoreError>;
