//! Image-level anomaly scores for the three pretext tasks.

use super::ood::{softmax_vec, OodMethod, OodScore, TaskId};
use crate::image::{tint_reconstruction_errors, Image, PiecePermutation, TintAngle};
use crate::network::GmmParamMap;
use crate::{CoreError, Result};
use ndarray::Array2;

/// Mean OOD score over the piece heads of one permuted view.
///
/// `piece_logits` is `[n, n]`: row `p` holds the position logits of piece
/// head `p`, whose true target is the position the permutation assigns to
/// that piece. Attention weights are not applied here; they only shape the
/// training loss.
pub fn puzzle_permutation_score(
    piece_logits: &Array2<f64>,
    perm: &PiecePermutation,
    ood: &OodMethod<'_>,
    sub_index: usize,
) -> Result<OodScore> {
    let n = perm.len();
    if piece_logits.shape() != [n, n] {
        return Err(CoreError::ShapeMismatch(format!(
            "expected [{n}, {n}] piece logits, got {:?}",
            piece_logits.shape()
        )));
    }
    let mut total = 0.0;
    for p in 0..n {
        let row = piece_logits.row(p).to_vec();
        total += ood.raw(&row, perm.position_of(p))?;
    }
    OodScore::new(total / n as f64, TaskId::PuzzlePiece, sub_index)
}

/// Expected tint-reconstruction error of one piece under the model's
/// predicted rotation distribution.
///
/// Identical expression to the per-piece training loss: each candidate
/// rotation's normalized L1 reconstruction error, weighted by its softmax
/// probability. Already error-like, so stored without negation; the value
/// lies in `[0, 1]`.
pub fn tint_anomaly_score(
    tint_logits: &[f64],
    piece: &Image,
    applied: TintAngle,
    sub_index: usize,
) -> Result<OodScore> {
    if tint_logits.len() != applied.num_rotations() {
        return Err(CoreError::ShapeMismatch(format!(
            "{} tint logits vs {} rotations",
            tint_logits.len(),
            applied.num_rotations()
        )));
    }
    let probs = softmax_vec(tint_logits);
    let errors = tint_reconstruction_errors(piece, applied)?;
    let value = probs
        .iter()
        .zip(errors.iter())
        .map(|(p, e)| p * e)
        .sum::<f64>();
    OodScore::new(value, TaskId::Tint, sub_index)
}

/// Mean per-pixel negative log-likelihood of the true chroma under the
/// predicted mixture, over the interior (mask = 0) only: the border chroma
/// is handed to the model as input and carries no signal.
pub fn colorization_score(
    gmm: &GmmParamMap,
    target_a: &Array2<f64>,
    target_b: &Array2<f64>,
    mask: &Array2<f64>,
) -> Result<OodScore> {
    let (h, w) = (gmm.height(), gmm.width());
    for (name, arr) in [("target_a", target_a), ("target_b", target_b), ("mask", mask)] {
        if arr.shape() != [h, w] {
            return Err(CoreError::ShapeMismatch(format!(
                "{name} shape {:?} vs mixture map {h}x{w}",
                arr.shape()
            )));
        }
    }
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..h {
        for j in 0..w {
            if mask[[i, j]] != 0.0 {
                continue;
            }
            // log sum_k pi_k N(ab; mu_k, Sigma_k), computed in log space.
            let mut max_lane = f64::NEG_INFINITY;
            let mut lanes = Vec::with_capacity(gmm.k);
            for k in 0..gmm.k {
                let v = [
                    target_a[[i, j]] - gmm.mean_a[[k, i, j]],
                    target_b[[i, j]] - gmm.mean_b[[k, i, j]],
                ];
                let (d1, d2, l) = (gmm.d1[[k, i, j]], gmm.d2[[k, i, j]], gmm.l[[k, i, j]]);
                let delta = crate::network::mahalanobis_sq(v, d1, d2, l);
                let lane = gmm.priors[[k, i, j]].max(f64::MIN_POSITIVE).ln()
                    - ln_2pi
                    - 0.5 * (d1 + d2)
                    - 0.5 * delta;
                max_lane = max_lane.max(lane);
                lanes.push(lane);
            }
            let log_density =
                max_lane + lanes.iter().map(|l| (l - max_lane).exp()).sum::<f64>().ln();
            total += -log_density;
            count += 1;
        }
    }
    if count == 0 {
        return Err(CoreError::EmptyInput(
            "no interior pixels to score".into(),
        ));
    }
    OodScore::new(total / count as f64, TaskId::Colorization, 0)
}
