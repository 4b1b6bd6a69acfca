//! RGB <-> HSV and RGB <-> LAB conversions.
//!
//! LAB uses sRGB primaries with the D65 white point; hue is stored in
//! radians in `[0, 2π)`. Round trips stay within 1.5/255 per 8-bit channel.

use super::{Colorspace, Image};
use crate::{CoreError, Result};
use ndarray::Array3;
use std::f64::consts::TAU;

// D65 reference white in XYZ, taken as the exact row sums of the sRGB
// matrix below so desaturated pixels land on exactly neutral chroma.
const XN: f64 = 0.4124564 + 0.3575761 + 0.1804375;
const YN: f64 = 0.2126729 + 0.7151522 + 0.0721750;
const ZN: f64 = 0.0193339 + 0.1191920 + 0.9503041;

/// Convert `img` to `target`.
///
/// Supported pairs: RGB <-> HSV and RGB <-> LAB (identity conversions are
/// free). HSV <-> LAB directly is not supported; go through RGB.
pub fn convert_colorspace(img: &Image, target: Colorspace) -> Result<Image> {
    if img.pixels.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::NonFinitePixels);
    }
    if img.colorspace == target {
        return Ok(img.clone());
    }
    if img.channels() != 3 {
        return Err(CoreError::UnsupportedConversion {
            from: format!("{}(1ch)", img.colorspace),
            to: target.to_string(),
        });
    }
    match (img.colorspace, target) {
        (Colorspace::Rgb8, Colorspace::Hsv) => Ok(map_pixels(img, target, rgb_to_hsv)),
        (Colorspace::Hsv, Colorspace::Rgb8) => Ok(map_pixels(img, target, hsv_to_rgb)),
        (Colorspace::Rgb8, Colorspace::Lab) => Ok(map_pixels(img, target, rgb_to_lab)),
        (Colorspace::Lab, Colorspace::Rgb8) => Ok(map_pixels(img, target, lab_to_rgb)),
        (from, to) => Err(CoreError::UnsupportedConversion {
            from: from.to_string(),
            to: to.to_string(),
        }),
    }
}

fn map_pixels(img: &Image, target: Colorspace, f: fn([f64; 3]) -> [f64; 3]) -> Image {
    let (h, w, _) = img.pixels.dim();
    let mut out = Array3::zeros((h, w, 3));
    for i in 0..h {
        for j in 0..w {
            let p = f([img.pixels[[i, j, 0]], img.pixels[[i, j, 1]], img.pixels[[i, j, 2]]]);
            out[[i, j, 0]] = p[0];
            out[[i, j, 1]] = p[1];
            out[[i, j, 2]] = p[2];
        }
    }
    Image {
        pixels: out,
        colorspace: target,
    }
}

pub(crate) fn rgb_to_hsv(rgb: [f64; 3]) -> [f64; 3] {
    let r = rgb[0] / 255.0;
    let g = rgb[1] / 255.0;
    let b = rgb[2] / 255.0;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let hue = if delta <= 0.0 {
        0.0
    } else if max == r {
        (TAU / 6.0) * (((g - b) / delta).rem_euclid(6.0))
    } else if max == g {
        (TAU / 6.0) * ((b - r) / delta + 2.0)
    } else {
        (TAU / 6.0) * ((r - g) / delta + 4.0)
    };
    let sat = if max <= 0.0 { 0.0 } else { delta / max };
    [hue.rem_euclid(TAU), sat, max]
}

pub(crate) fn hsv_to_rgb(hsv: [f64; 3]) -> [f64; 3] {
    let h = hsv[0].rem_euclid(TAU) / (TAU / 6.0); // sector in [0, 6)
    let s = hsv[1].clamp(0.0, 1.0);
    let v = hsv[2].clamp(0.0, 1.0);
    let c = v * s;
    let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
    let (r1, g1, b1) = match h as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [(r1 + m) * 255.0, (g1 + m) * 255.0, (b1 + m) * 255.0]
}

fn srgb_linearize(u: f64) -> f64 {
    if u <= 0.04045 {
        u / 12.92
    } else {
        ((u + 0.055) / 1.055).powf(2.4)
    }
}

fn srgb_delinearize(u: f64) -> f64 {
    if u <= 0.0031308 {
        12.92 * u
    } else {
        1.055 * u.powf(1.0 / 2.4) - 0.055
    }
}

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

fn lab_f_inv(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA {
        t * t * t
    } else {
        3.0 * DELTA * DELTA * (t - 4.0 / 29.0)
    }
}

pub(crate) fn rgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let r = srgb_linearize(rgb[0] / 255.0);
    let g = srgb_linearize(rgb[1] / 255.0);
    let b = srgb_linearize(rgb[2] / 255.0);
    let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
    let fx = lab_f(x / XN);
    let fy = lab_f(y / YN);
    let fz = lab_f(z / ZN);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

pub(crate) fn lab_to_rgb(lab: [f64; 3]) -> [f64; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let x = XN * lab_f_inv(fx);
    let y = YN * lab_f_inv(fy);
    let z = ZN * lab_f_inv(fz);
    let r = 3.2404542 * x - 1.5371385 * y - 0.4985314 * z;
    let g = -0.9692660 * x + 1.8760108 * y + 0.0415560 * z;
    let b = 0.0556434 * x - 0.2040259 * y + 1.0572252 * z;
    [
        (srgb_delinearize(r.clamp(0.0, 1.0)) * 255.0).clamp(0.0, 255.0),
        (srgb_delinearize(g.clamp(0.0, 1.0)) * 255.0).clamp(0.0, 255.0),
        (srgb_delinearize(b.clamp(0.0, 1.0)) * 255.0).clamp(0.0, 255.0),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{Colorspace, Image};
    use approx::assert_abs_diff_eq;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};

    #[test]
    fn gray_has_zero_saturation() {
        let img = Image::solid_rgb(2, 2, [128.0, 128.0, 128.0]);
        let hsv = convert_colorspace(&img, Colorspace::Hsv).unwrap();
        assert_abs_diff_eq!(hsv.pixels[[0, 0, 1]], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn pure_red_has_zero_hue() {
        let img = Image::solid_rgb(1, 1, [255.0, 0.0, 0.0]);
        let hsv = convert_colorspace(&img, Colorspace::Hsv).unwrap();
        assert_abs_diff_eq!(hsv.pixels[[0, 0, 0]], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn gray_maps_to_neutral_ab() {
        let img = Image::solid_rgb(1, 1, [100.0, 100.0, 100.0]);
        let lab = convert_colorspace(&img, Colorspace::Lab).unwrap();
        assert_abs_diff_eq!(lab.pixels[[0, 0, 1]], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(lab.pixels[[0, 0, 2]], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn rgb_lab_round_trip_within_tolerance() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut px = Array3::zeros((16, 16, 3));
        for v in px.iter_mut() {
            *v = rng.gen_range(0u32..=255) as f64;
        }
        let img = Image::new(px, Colorspace::Rgb8).unwrap();
        let lab = convert_colorspace(&img, Colorspace::Lab).unwrap();
        let back = convert_colorspace(&lab, Colorspace::Rgb8).unwrap();
        assert!(img.max_abs_diff(&back) <= 1.5, "err {}", img.max_abs_diff(&back));
    }

    #[test]
    fn rgb_hsv_round_trip_within_tolerance() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mut px = Array3::zeros((16, 16, 3));
        for v in px.iter_mut() {
            *v = rng.gen_range(0u32..=255) as f64;
        }
        let img = Image::new(px, Colorspace::Rgb8).unwrap();
        let hsv = convert_colorspace(&img, Colorspace::Hsv).unwrap();
        let back = convert_colorspace(&hsv, Colorspace::Rgb8).unwrap();
        assert!(img.max_abs_diff(&back) <= 1.5);
    }

    #[test]
    fn unsupported_pair_rejected() {
        let img = Image::solid_rgb(1, 1, [1.0, 2.0, 3.0]);
        let hsv = convert_colorspace(&img, Colorspace::Hsv).unwrap();
        assert!(convert_colorspace(&hsv, Colorspace::Lab).is_err());
    }

    #[test]
    fn nan_pixels_rejected() {
        let mut px = Array3::zeros((1, 1, 3));
        px[[0, 0, 0]] = f64::NAN;
        let img = Image {
            pixels: px,
            colorspace: Colorspace::Rgb8,
        };
        assert!(convert_colorspace(&img, Colorspace::Hsv).is_err());
    }
}
