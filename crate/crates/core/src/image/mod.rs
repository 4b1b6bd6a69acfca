//! Pretext-data generation: colorspaces, puzzle pieces, tint rotation,
//! partial-color masking and mixture-count selection.
//!
//! Everything here is a pure function of its inputs plus an explicit seed,
//! safe to call from many threads.

mod colorspace;
mod kmeans;
mod partial_color;
mod puzzle;
mod resize;
mod tint;

pub use colorspace::convert_colorspace;
pub use kmeans::{choose_num_clusters, kmeans_inertia};
pub use partial_color::{make_partial_color_input, PartialColorInput};
pub use puzzle::{
    apply_permutation, fixed_inference_permutations, sample_training_permutations,
    split_into_pieces, PieceGeometry, PiecePermutation, PuzzleGrid,
};
pub use resize::resize_bilinear;
pub use tint::{tint_reconstruction_errors, tint_rotate, TintAngle};

use crate::{CoreError, Result};
use ndarray::Array3;

/// Colorspace of an [`Image`].
///
/// * `Rgb8`: channels in `[0, 255]` (stored as reals).
/// * `Hsv`: hue in `[0, 2π)` radians, saturation and value in `[0, 1]`.
/// * `Lab`: CIE L\*a\*b\* under the D65 white point; L in `[0, 100]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Colorspace {
    Rgb8,
    Hsv,
    Lab,
}

impl std::fmt::Display for Colorspace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Colorspace::Rgb8 => write!(f, "rgb8"),
            Colorspace::Hsv => write!(f, "hsv"),
            Colorspace::Lab => write!(f, "lab"),
        }
    }
}

/// A multi-channel raster in a declared colorspace.
///
/// Pixels are stored as an `H x W x C` array of reals. `C = 3` for color,
/// `C = 1` is permitted only as luminance.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub pixels: Array3<f64>,
    pub colorspace: Colorspace,
}

impl Image {
    pub fn new(pixels: Array3<f64>, colorspace: Colorspace) -> Result<Self> {
        let c = pixels.shape()[2];
        if c != 3 && c != 1 {
            return Err(CoreError::ShapeMismatch(format!(
                "expected 1 or 3 channels, got {c}"
            )));
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinitePixels);
        }
        Ok(Image { pixels, colorspace })
    }

    /// Solid-color RGB image, channel values in `[0, 255]`.
    pub fn solid_rgb(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let mut px = Array3::zeros((height, width, 3));
        for ch in 0..3 {
            px.slice_mut(ndarray::s![.., .., ch]).fill(rgb[ch]);
        }
        Image {
            pixels: px,
            colorspace: Colorspace::Rgb8,
        }
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.pixels.shape()[2]
    }

    /// Maximum absolute per-channel difference to another image.
    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        self.pixels
            .iter()
            .zip(other.pixels.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// True if every pixel has equal R, G and B (tint rotation is then a no-op).
    pub fn is_desaturated(&self) -> bool {
        if self.channels() == 1 {
            return true;
        }
        self.pixels.outer_iter().all(|row| {
            row.outer_iter()
                .all(|px| (px[0] - px[1]).abs() < 1e-9 && (px[1] - px[2]).abs() < 1e-9)
        })
    }

    /// Crop a rectangular region (row, col origin; height x width extent).
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Image {
        let view = self
            .pixels
            .slice(ndarray::s![top..top + height, left..left + width, ..]);
        Image {
            pixels: view.to_owned(),
            colorspace: self.colorspace,
        }
    }
}
