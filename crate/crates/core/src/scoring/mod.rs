//! Per-task out-of-distribution scoring, calibration, and fusion.
//!
//! Each test image yields one score per pretext-task instance (one per
//! sampled permutation, one per piece tint, one colorization NLL), all
//! oriented "higher = more anomalous". [`CalibrationTable`] turns raw
//! scores into percentile ranks against held-out normal images, and
//! [`fuse`] collapses the calibrated set into a single anomaly score with
//! an order statistic.

mod calibrate;
mod odin;
mod ood;
mod tasks;

pub use calibrate::{calibrate, calibrate_and_fuse, fuse, CalibrationTable, FusionMethod};
pub use odin::odin_transform;
pub use ood::{
    fit_class_stats, mahalanobis_ood, softmax_truth, softmax_vec, ClassGaussian, ClassStats,
    OodMethod, OodScore, TaskId, COVARIANCE_RIDGE_SCALE,
};
pub use tasks::{colorization_score, puzzle_permutation_score, tint_anomaly_score};
