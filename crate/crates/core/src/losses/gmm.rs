//! Per-pixel Gaussian-mixture chroma loss, trained as a three-step
//! alternation: squared Mahalanobis distances through the Cholesky factors,
//! posterior responsibilities held constant, then one descent step on the
//! weighted complete-data objective.

use crate::autodiff::Var;
use crate::error::CoreError;
use crate::Result;
use ndarray::{ArrayD, IxDyn};

/// Floor applied to mixing proportions before taking logs.
pub const PRIOR_FLOOR: f64 = 1e-6;

/// Graph-side views of the six parameter groups of a `[B, 6K, H, W]`
/// decoder output; each field is `[B, K, H, W]`.
pub struct GmmVars<'t> {
    pub k: usize,
    pub prior_logits: Var<'t>,
    pub mean_a: Var<'t>,
    pub mean_b: Var<'t>,
    pub d1: Var<'t>,
    pub d2: Var<'t>,
    pub l: Var<'t>,
}

impl<'t> GmmVars<'t> {
    /// Splits the channel axis into prior logits, means, and covariance
    /// parameters, in that order.
    pub fn split(out: Var<'t>, k: usize) -> Result<GmmVars<'t>> {
        let shape = out.shape();
        if shape.len() != 4 || shape[1] != 6 * k {
            return Err(CoreError::ShapeMismatch(format!(
                "expected [B, {}, H, W] decoder output, got {shape:?}",
                6 * k
            )));
        }
        let group = |g: usize| out.slice_axis(1, g * k, (g + 1) * k);
        Ok(GmmVars {
            k,
            prior_logits: group(0),
            mean_a: group(1),
            mean_b: group(2),
            d1: group(3),
            d2: group(4),
            l: group(5),
        })
    }
}

/// Squared Mahalanobis distance of each pixel's chroma to every component,
/// `[B, K, H, W]`, computed by forward substitution through the unit-lower
/// Cholesky factor: `y1 = v1, y2 = v2 - l*v1`, then
/// `y1^2*e^-d1 + y2^2*e^-d2`. Differentiable in the means and (d, l).
pub fn em_mahalanobis<'t>(
    gmm: &GmmVars<'t>,
    target_a: &ArrayD<f64>,
    target_b: &ArrayD<f64>,
) -> Result<Var<'t>> {
    let shape = gmm.mean_a.shape();
    let (bsz, h, w) = (shape[0], shape[2], shape[3]);
    for t in [target_a, target_b] {
        if t.shape() != [bsz, h, w] {
            return Err(CoreError::ShapeMismatch(format!(
                "expected [{bsz}, {h}, {w}] chroma target, got {:?}",
                t.shape()
            )));
        }
    }
    let tape = gmm.mean_a.tape();
    let to4 = |t: &ArrayD<f64>| {
        tape.constant(
            t.clone()
                .into_shape_with_order(IxDyn(&[bsz, 1, h, w]))
                .unwrap(),
        )
    };
    // v = x - mu, broadcast over components.
    let v1 = gmm.mean_a.neg().add(to4(target_a));
    let v2 = gmm.mean_b.neg().add(to4(target_b));
    let y2 = v2.sub(gmm.l.mul(v1));
    let t1 = v1.mul(v1).mul(gmm.d1.neg().exp());
    let t2 = y2.mul(y2).mul(gmm.d2.neg().exp());
    Ok(t1.add(t2))
}

/// Posterior responsibilities `gamma ~ pi * exp(-(d1+d2+delta)/2)`,
/// normalized per pixel with log-sum-exp stabilization. Value-level: the
/// result is held constant during the descent step.
pub fn em_posteriors(
    prior_logits: &ArrayD<f64>,
    d1: &ArrayD<f64>,
    d2: &ArrayD<f64>,
    delta: &ArrayD<f64>,
) -> ArrayD<f64> {
    let shape = delta.shape();
    let (bsz, k, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let mut gamma = ArrayD::zeros(IxDyn(shape));
    let mut lane = vec![0.0; k];
    for b in 0..bsz {
        for i in 0..h {
            for j in 0..w {
                // log pi via shifted softmax of the prior logits.
                let mut mx = f64::NEG_INFINITY;
                for kk in 0..k {
                    mx = mx.max(prior_logits[[b, kk, i, j]]);
                }
                let mut z = 0.0;
                for kk in 0..k {
                    z += (prior_logits[[b, kk, i, j]] - mx).exp();
                }
                let logz = z.ln() + mx;
                let mut smax = f64::NEG_INFINITY;
                for (kk, lv) in lane.iter_mut().enumerate() {
                    let logpi = prior_logits[[b, kk, i, j]] - logz;
                    *lv = logpi
                        - 0.5 * (d1[[b, kk, i, j]] + d2[[b, kk, i, j]] + delta[[b, kk, i, j]]);
                    smax = smax.max(*lv);
                }
                let mut sz = 0.0;
                for lv in &lane {
                    sz += (lv - smax).exp();
                }
                for kk in 0..k {
                    gamma[[b, kk, i, j]] = (lane[kk] - smax).exp() / sz;
                }
            }
        }
    }
    gamma
}

/// Responsibility-weighted objective, averaged over pixels:
/// `mean_ij sum_k gamma * (delta + d1 + d2 - log pi)` with `gamma` constant
/// and the priors floored at [`PRIOR_FLOOR`] before the log.
pub fn em_q_loss<'t>(gamma: &ArrayD<f64>, gmm: &GmmVars<'t>, delta: Var<'t>) -> Result<Var<'t>> {
    let shape = delta.shape();
    if gamma.shape() != shape.as_slice() {
        return Err(CoreError::ShapeMismatch(format!(
            "responsibilities {:?} do not match distances {shape:?}",
            gamma.shape()
        )));
    }
    let (bsz, h, w) = (shape[0], shape[2], shape[3]);
    let tape = delta.tape();
    let log_pi = gmm.prior_logits.softmax(1).ln_clamped(PRIOR_FLOOR);
    let term = delta.add(gmm.d1).add(gmm.d2).sub(log_pi);
    Ok(tape
        .constant(gamma.clone())
        .mul(term)
        .sum_all()
        .mul_scalar(1.0 / (bsz * h * w) as f64))
}
