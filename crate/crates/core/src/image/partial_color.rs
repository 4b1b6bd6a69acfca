//! Partial re-colorization input: luminance plus a color border.

use super::{convert_colorspace, Colorspace, Image};
use crate::{CoreError, Result};
use ndarray::Array2;

/// Input/target pair for the re-colorization task.
///
/// The model sees the full luminance plane and the A/B chroma planes masked
/// to an `alpha`-pixel frame; the targets are the full chroma planes.
#[derive(Debug, Clone)]
pub struct PartialColorInput {
    pub luminance: Array2<f64>,
    pub masked_a: Array2<f64>,
    pub masked_b: Array2<f64>,
    /// 1.0 on the `alpha`-pixel frame, 0.0 in the interior.
    pub mask: Array2<f64>,
    pub alpha: usize,
    pub target_a: Array2<f64>,
    pub target_b: Array2<f64>,
}

/// Convert to LAB and mask the chroma planes down to a border of width
/// `alpha`. A border covering the whole image leaves nothing to predict and
/// is rejected.
pub fn make_partial_color_input(img: &Image, alpha: usize) -> Result<PartialColorInput> {
    let (h, w) = (img.height(), img.width());
    if 2 * alpha >= h.min(w) {
        return Err(CoreError::DegenerateBorder {
            alpha,
            height: h,
            width: w,
        });
    }
    let lab = convert_colorspace(img, Colorspace::Lab)?;
    let luminance = lab.pixels.slice(ndarray::s![.., .., 0]).to_owned();
    let target_a = lab.pixels.slice(ndarray::s![.., .., 1]).to_owned();
    let target_b = lab.pixels.slice(ndarray::s![.., .., 2]).to_owned();
    let mut mask = Array2::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            if i < alpha || i >= h - alpha || j < alpha || j >= w - alpha {
                mask[[i, j]] = 1.0;
            }
        }
    }
    let masked_a = &target_a * &mask;
    let masked_b = &target_b * &mask;
    Ok(PartialColorInput {
        luminance,
        masked_a,
        masked_b,
        mask,
        alpha,
        target_a,
        target_b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_pixel_count() {
        let img = Image::solid_rgb(8, 8, [200.0, 30.0, 30.0]);
        let pc = make_partial_color_input(&img, 2).unwrap();
        let ones = pc.mask.iter().filter(|v| **v == 1.0).count();
        let zeros = pc.mask.iter().filter(|v| **v == 0.0).count();
        assert_eq!(ones, 48);
        assert_eq!(zeros, 16);
    }

    #[test]
    fn frame_count_formula() {
        for (h, w, a) in [(8usize, 8usize, 2usize), (10, 6, 1), (9, 13, 3)] {
            let img = Image::solid_rgb(h, w, [10.0, 200.0, 60.0]);
            let pc = make_partial_color_input(&img, a).unwrap();
            let ones = pc.mask.iter().filter(|v| **v == 1.0).count();
            assert_eq!(ones, h * w - (h - 2 * a) * (w - 2 * a));
        }
    }

    #[test]
    fn alpha_zero_masks_everything() {
        let img = Image::solid_rgb(4, 4, [10.0, 250.0, 80.0]);
        let pc = make_partial_color_input(&img, 0).unwrap();
        assert!(pc.mask.iter().all(|v| *v == 0.0));
        assert!(pc.masked_a.iter().all(|v| *v == 0.0));
        assert!(pc.masked_b.iter().all(|v| *v == 0.0));
        assert!(pc.target_a.iter().any(|v| v.abs() > 1.0));
    }

    #[test]
    fn masked_planes_match_targets_on_frame() {
        let img = Image::solid_rgb(6, 6, [30.0, 90.0, 220.0]);
        let pc = make_partial_color_input(&img, 1).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(pc.masked_a[[i, j]], pc.target_a[[i, j]] * pc.mask[[i, j]]);
                assert_eq!(pc.masked_b[[i, j]], pc.target_b[[i, j]] * pc.mask[[i, j]]);
            }
        }
    }

    #[test]
    fn grayscale_targets_neutral() {
        let img = Image::solid_rgb(8, 8, [128.0, 128.0, 128.0]);
        let pc = make_partial_color_input(&img, 2).unwrap();
        assert!(pc.target_a.iter().all(|v| v.abs() < 1e-6));
        assert!(pc.target_b.iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn degenerate_border_rejected() {
        let img = Image::solid_rgb(8, 8, [1.0, 2.0, 3.0]);
        assert!(make_partial_color_input(&img, 4).is_err());
        assert!(make_partial_color_input(&img, 3).is_ok());
    }
}
