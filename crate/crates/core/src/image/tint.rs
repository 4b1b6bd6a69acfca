//! Hue-channel tint rotation and its L1 reconstruction errors.

use super::{convert_colorspace, Colorspace, Image};
use crate::{CoreError, Result};
use std::f64::consts::TAU;

/// One of `c` quantized hue offsets; the angle is `index * 2π / c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TintAngle {
    index: usize,
    c: usize,
}

impl TintAngle {
    pub fn new(index: usize, c: usize) -> Result<Self> {
        if c == 0 || index >= c {
            return Err(CoreError::Config(format!(
                "tint index {index} outside [0, {c})"
            )));
        }
        Ok(TintAngle { index, c })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn num_rotations(&self) -> usize {
        self.c
    }

    pub fn radians(&self) -> f64 {
        self.index as f64 * TAU / self.c as f64
    }

    /// The quantized angle `self − k·2π/c`, wrapped modulo 2π.
    pub fn minus_steps(&self, k: usize) -> TintAngle {
        TintAngle {
            index: (self.index + self.c - k % self.c) % self.c,
            c: self.c,
        }
    }

    /// The quantized angle `self + other`, wrapped modulo 2π.
    pub fn plus(&self, other: TintAngle) -> Result<TintAngle> {
        if self.c != other.c {
            return Err(CoreError::Config(format!(
                "cannot add tint angles with c={} and c={}",
                self.c, other.c
            )));
        }
        Ok(TintAngle {
            index: (self.index + other.index) % self.c,
            c: self.c,
        })
    }
}

/// Shift the hue channel by `theta` in HSV space, preserving saturation and
/// value, and convert back to RGB. Desaturated pixels are unaffected.
pub fn tint_rotate(img: &Image, theta: TintAngle) -> Result<Image> {
    rotate_hue(img, theta.radians())
}

fn rotate_hue(img: &Image, radians: f64) -> Result<Image> {
    let mut hsv = convert_colorspace(img, Colorspace::Hsv)?;
    for mut row in hsv.pixels.outer_iter_mut() {
        for mut px in row.outer_iter_mut() {
            px[0] = (px[0] + radians).rem_euclid(TAU);
        }
    }
    convert_colorspace(&hsv, Colorspace::Rgb8)
}

/// L1 reconstruction error of the observed piece against each of the `c`
/// candidate de-rotations.
///
/// `applied` is the tint the piece was generated with (index 0 for raw
/// images at inference). Entry `k` is
/// `‖I − γ(I, (j−k)·2π/c)‖₁ / (W·H·255)` where `j` is the applied index,
/// so the entry at `k = j` is ~0 and the values are constants with respect
/// to any model parameters.
pub fn tint_reconstruction_errors(piece: &Image, applied: TintAngle) -> Result<Vec<f64>> {
    if piece.colorspace != Colorspace::Rgb8 {
        return Err(CoreError::UnsupportedConversion {
            from: piece.colorspace.to_string(),
            to: "rgb8 (tint rotation)".to_string(),
        });
    }
    let norm = (piece.height() * piece.width()) as f64 * 255.0;
    (0..applied.num_rotations())
        .map(|k| {
            let rec = tint_rotate(piece, applied.minus_steps(k))?;
            let l1: f64 = piece
                .pixels
                .iter()
                .zip(rec.pixels.iter())
                .map(|(a, b)| (a - b).abs())
                .sum();
            Ok(l1 / norm)
        })
        .collect()
}
