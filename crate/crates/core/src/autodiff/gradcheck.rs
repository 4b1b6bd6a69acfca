//! Central finite-difference gradient verification.

use ndarray::ArrayD;

/// Central finite-difference gradient of `f` at `params`.
pub fn finite_diff(
    f: &mut dyn FnMut(&[ArrayD<f64>]) -> f64,
    params: &[ArrayD<f64>],
    eps: f64,
) -> Vec<ArrayD<f64>> {
    let mut work: Vec<ArrayD<f64>> = params.to_vec();
    let mut grads = Vec::with_capacity(params.len());
    for pi in 0..params.len() {
        let mut g = ArrayD::zeros(params[pi].raw_dim());
        for flat in 0..params[pi].len() {
            let orig = *params[pi].iter().nth(flat).unwrap();
            *work[pi].iter_mut().nth(flat).unwrap() = orig + eps;
            let fp = f(&work);
            *work[pi].iter_mut().nth(flat).unwrap() = orig - eps;
            let fm = f(&work);
            *work[pi].iter_mut().nth(flat).unwrap() = orig;
            *g.iter_mut().nth(flat).unwrap() = (fp - fm) / (2.0 * eps);
        }
        grads.push(g);
    }
    grads
}

/// Outcome of comparing analytic against numeric gradients.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub n_params: usize,
    pub max_rel: f64,
    /// Fraction of parameters whose relative error is within the tolerance
    /// passed to [`check_gradients`].
    pub frac_within: f64,
}

/// Guarded relative error: |a-b| / max(|a|, |b|, 1e-6).
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compare analytic and numeric gradients elementwise.
pub fn check_gradients(analytic: &[ArrayD<f64>], numeric: &[ArrayD<f64>], tol: f64) -> GradCheck {
    assert_eq!(analytic.len(), numeric.len());
    let mut n = 0usize;
    let mut within = 0usize;
    let mut max_rel = 0.0f64;
    for (ga, gn) in analytic.iter().zip(numeric) {
        assert_eq!(ga.shape(), gn.shape(), "gradient shape mismatch");
        for (a, b) in ga.iter().zip(gn.iter()) {
            let r = rel_err(*a, *b);
            max_rel = max_rel.max(r);
            n += 1;
            if r <= tol {
                within += 1;
            }
        }
    }
    GradCheck {
        n_params: n,
        max_rel,
        frac_within: if n == 0 { 1.0 } else { within as f64 / n as f64 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use ndarray::arr1;

    #[test]
    fn quadratic_gradient_checks_out() {
        // f(p) = sum(p^2 * w) with constant w
        let w = arr1(&[1.0, 2.0, 3.0]).into_dyn();
        let p0 = arr1(&[0.5, -1.0, 2.0]).into_dyn();
        let weights = w.clone();
        let mut f = move |params: &[ndarray::ArrayD<f64>]| -> f64 {
            params[0].iter().zip(weights.iter()).map(|(p, w)| p * p * w).sum()
        };
        let numeric = finite_diff(&mut f, std::slice::from_ref(&p0), 1e-5);

        let t = Tape::new();
        let p = t.leaf(p0);
        let wv = t.constant(w);
        let loss = p.mul(p).mul(wv).sum_all();
        let grads = t.backward(loss);
        let analytic = vec![grads.get(p).unwrap().clone()];

        let report = check_gradients(&analytic, &numeric, 1e-6);
        assert_eq!(report.n_params, 3);
        assert_eq!(report.frac_within, 1.0);
        assert!(report.max_rel < 1e-6);
    }

    #[test]
    fn detects_wrong_gradient() {
        let a = vec![arr1(&[1.0, 2.0]).into_dyn()];
        let b = vec![arr1(&[1.0, 2.5]).into_dyn()];
        let report = check_gradients(&a, &b, 1e-3);
        assert!(report.frac_within < 1.0);
        assert!(report.max_rel > 0.1);
    }
}
