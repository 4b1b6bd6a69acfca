//! Color-bin classification loss: per-pixel cross-entropy over quantized
//! chroma bins, with optional gaussian smoothing of the predicted
//! distribution along the bin axis.

use crate::autodiff::Var;
use crate::error::CoreError;
use crate::Result;
use ndarray::{Array2, Array3, ArrayD, IxDyn};

/// Chroma values are quantized over this fixed (lo, hi) interval.
pub const CHROMA_RANGE: (f64, f64) = (-128.0, 128.0);

const PROB_FLOOR: f64 = 1e-12;

/// Maps a chroma plane to bin indices in `[0, k)` over [`CHROMA_RANGE`],
/// clamping out-of-range values into the edge bins.
pub fn quantize_chroma(plane: &Array2<f64>, k: usize) -> Array2<usize> {
    let (lo, hi) = CHROMA_RANGE;
    let scale = k as f64 / (hi - lo);
    plane.mapv(|v| (((v - lo) * scale).floor() as i64).clamp(0, k as i64 - 1) as usize)
}

/// Smooths each row of a `[N, K]` probability matrix with a gaussian kernel
/// over the bin axis (no wraparound), then renormalizes the rows.
pub fn smooth_bin_distribution(probs: Var<'_>, sigma: f64) -> Var<'_> {
    if sigma <= 0.0 {
        return probs;
    }
    let k = probs.shape()[1];
    let mut kernel = Array2::zeros((k, k));
    for j in 0..k {
        for i in 0..k {
            let d = i as f64 - j as f64;
            kernel[[j, i]] = (-d * d / (2.0 * sigma * sigma)).exp();
        }
    }
    let smeared = probs.matmul(probs.tape().constant(kernel.into_dyn()));
    smeared.div(smeared.sum_axis_keep(1))
}

/// Cross-entropy of the (optionally smoothed) bin distributions against the
/// quantized chroma targets; the A and B planes are scored independently and
/// the two pixel-mean losses averaged. `logits` is `[B, 2K, H, W]` with the
/// A bins in the first K channels.
pub fn bin_color_loss<'t>(
    logits: Var<'t>,
    labels_a: &Array3<usize>,
    labels_b: &Array3<usize>,
    sigma: f64,
) -> Result<Var<'t>> {
    let shape = logits.shape();
    if shape.len() != 4 || shape[1] % 2 != 0 {
        return Err(CoreError::ShapeMismatch(format!(
            "expected [B, 2K, H, W] bin logits, got {shape:?}"
        )));
    }
    let (bsz, k, h, w) = (shape[0], shape[1] / 2, shape[2], shape[3]);
    for labels in [labels_a, labels_b] {
        if labels.dim() != (bsz, h, w) {
            return Err(CoreError::ShapeMismatch(format!(
                "expected [{bsz}, {h}, {w}] bin labels, got {:?}",
                labels.dim()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&v| v >= k) {
            return Err(CoreError::Data(format!(
                "bin label {bad} outside [0, {k})"
            )));
        }
    }

    let plane_loss = |plane: Var<'t>, labels: &Array3<usize>| -> Var<'t> {
        let n = bsz * h * w;
        let flat = plane
            .softmax(1)
            .permute_axes(&[0, 2, 3, 1])
            .reshape(&[n, k]);
        let dist = smooth_bin_distribution(flat, sigma);
        let mut onehot = ArrayD::zeros(IxDyn(&[n, k]));
        for b in 0..bsz {
            for i in 0..h {
                for j in 0..w {
                    onehot[[(b * h + i) * w + j, labels[[b, i, j]]]] = 1.0;
                }
            }
        }
        plane
            .tape()
            .constant(onehot)
            .mul(dist.ln_clamped(PROB_FLOOR))
            .sum_all()
            .mul_scalar(-1.0 / n as f64)
    };

    let loss_a = plane_loss(logits.slice_axis(1, 0, k), labels_a);
    let loss_b = plane_loss(logits.slice_axis(1, k, 2 * k), labels_b);
    Ok(loss_a.add(loss_b).mul_scalar(0.5))
}
