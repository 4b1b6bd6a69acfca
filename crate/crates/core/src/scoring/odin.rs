//! Confidence-sharpening input perturbation.

use crate::autodiff::{Tape, Var};
use crate::image::Image;
use crate::{CoreError, Result};

/// Nudges every pixel one signed step toward higher predicted confidence.
///
/// The model maps the image tensor (as a tape variable in the image's own
/// `[H, W, C]` layout) to a class-logit vector. The perturbation takes the
/// gradient of the temperature-scaled log-softmax at the predicted class
/// (ties broken toward the lowest index) with respect to the input and
/// applies `x - epsilon * sign(-grad)`, clipping to `[0, 255]`. With
/// `epsilon = 0` the input is returned unchanged. Disabled by default in
/// the pipeline; exposed for confidence-calibration experiments.
pub fn odin_transform<F>(img: &Image, temperature: f64, epsilon: f64, model: F) -> Result<Image>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    if temperature <= 0.0 || !temperature.is_finite() {
        return Err(CoreError::Config(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if epsilon < 0.0 || !epsilon.is_finite() {
        return Err(CoreError::Config(format!(
            "perturbation must be >= 0, got {epsilon}"
        )));
    }
    if epsilon == 0.0 {
        return Ok(img.clone());
    }
    let tape = Tape::new();
    let x = tape.leaf(img.pixels.clone().into_dyn());
    let logits = model(&tape, x)?;
    let shape = logits.shape();
    if shape.len() != 1 || shape[0] == 0 {
        return Err(CoreError::ShapeMismatch(format!(
            "expected a non-empty logit vector, got {shape:?}"
        )));
    }
    let values = logits.value();
    let predicted = values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    let objective = logits
        .mul_scalar(1.0 / temperature)
        .log_softmax(0)
        .slice_axis(0, predicted, predicted + 1)
        .sum_all();
    let grads = tape.backward(objective);
    let grad = grads.get_or_zeros(x);
    let mut pixels = img.pixels.clone();
    for (p, g) in pixels.iter_mut().zip(grad.iter()) {
        *p = (*p - epsilon * sign(-g)).clamp(0.0, 255.0);
    }
    Image::new(pixels, img.colorspace)
}

/// Sign with `sign(0) = 0`, so zero-gradient pixels stay put.
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array2, Array3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const CLASSES: usize = 3;

    /// Fixed random linear probe: logits = flatten(x) . W.
    fn probe_weights(dim: usize) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        Array2::from_shape_fn((dim, CLASSES), |_| (rng.gen::<f64>() - 0.5) * 2e-3)
    }

    fn probe_logits(pixels: &Array3<f64>, w: &Array2<f64>) -> Vec<f64> {
        let flat: Vec<f64> = pixels.iter().cloned().collect();
        (0..CLASSES)
            .map(|c| flat.iter().enumerate().map(|(i, v)| v * w[[i, c]]).sum())
            .collect()
    }

    fn scaled_log_softmax_at(logits: &[f64], y: usize, t: f64) -> f64 {
        let scaled: Vec<f64> = logits.iter().map(|v| v / t).collect();
        let m = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = scaled.iter().map(|v| (v - m).exp()).sum();
        scaled[y] - m - z.ln()
    }

    fn test_image(h: usize, w: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let px = Array3::from_shape_fn((h, w, 3), |_| 100.0 + rng.gen::<f64>() * 50.0);
        Image::new(px, crate::image::Colorspace::Rgb8).unwrap()
    }

    fn model_for(
        w: Array2<f64>,
    ) -> impl for<'t> Fn(&'t Tape, crate::autodiff::Var<'t>) -> crate::Result<crate::autodiff::Var<'t>>
    {
        move |tape, x| {
            let dim = w.nrows();
            let wv = tape.constant(w.clone().into_dyn());
            Ok(x.reshape(&[1, dim]).matmul(wv).reshape(&[CLASSES]))
        }
    }

    #[test]
    fn zero_perturbation_is_identity() {
        let img = test_image(8, 8);
        let w = probe_weights(8 * 8 * 3);
        let out = odin_transform(&img, 10.0, 0.0, model_for(w)).unwrap();
        assert_eq!(out.max_abs_diff(&img), 0.0);
    }

    #[test]
    fn perturbed_pixels_stay_in_range() {
        let mut img = test_image(8, 8);
        img.pixels.slice_mut(ndarray::s![..4, .., ..]).fill(0.0);
        img.pixels.slice_mut(ndarray::s![4.., .., ..]).fill(255.0);
        let w = probe_weights(8 * 8 * 3);
        let out = odin_transform(&img, 10.0, 3.0, model_for(w)).unwrap();
        assert!(out.pixels.iter().all(|&v| (0.0..=255.0).contains(&v)));
    }

    #[test]
    fn perturbation_follows_input_gradient_signs() {
        let img = test_image(8, 8);
        let dim = 8 * 8 * 3;
        let w = probe_weights(dim);
        let eps = 0.5;
        let out = odin_transform(&img, 10.0, eps, model_for(w.clone())).unwrap();

        // Finite-difference oracle for the same objective: the predicted
        // class's temperature-scaled log-softmax.
        let y = probe_logits(&img.pixels, &w)
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap();
        let h = 1e-3;
        let mut matched = 0usize;
        let flat_index = |i: usize| {
            let c = i % 3;
            let col = (i / 3) % 8;
            let row = i / 24;
            (row, col, c)
        };
        for i in 0..dim {
            let (r, cc, ch) = flat_index(i);
            let mut plus = img.pixels.clone();
            plus[[r, cc, ch]] += h;
            let mut minus = img.pixels.clone();
            minus[[r, cc, ch]] -= h;
            let fd = (scaled_log_softmax_at(&probe_logits(&plus, &w), y, 10.0)
                - scaled_log_softmax_at(&probe_logits(&minus, &w), y, 10.0))
                / (2.0 * h);
            let moved = (out.pixels[[r, cc, ch]] - img.pixels[[r, cc, ch]]) / eps;
            if moved == sign(fd) {
                matched += 1;
            }
        }
        let frac = matched as f64 / dim as f64;
        assert!(frac >= 0.99, "sign agreement {frac}");
    }

    #[test]
    fn invalid_settings_rejected() {
        let img = test_image(4, 4);
        let w = probe_weights(4 * 4 * 3);
        let err = odin_transform(&img, 10.0, -0.5, model_for(w.clone())).unwrap_err();
        assert!(matches!(err, CoreError::Config(_)));
        let err = odin_transform(&img, 0.0, 0.5, model_for(w)).unwrap_err();
        assert!(matches!(err, CoreError::Config(_)));
    }
}
