//! Bilinear resampling.

use super::Image;
use crate::{CoreError, Result};
use ndarray::Array3;

/// Resize with bilinear interpolation over pixel centers
/// (`src = (dst + 0.5) * scale - 0.5`, edges clamped).
pub fn resize_bilinear(img: &Image, new_h: usize, new_w: usize) -> Result<Image> {
    if new_h == 0 || new_w == 0 {
        return Err(CoreError::Config("resize target has a zero side".into()));
    }
    let (h, w, c) = (img.height(), img.width(), img.channels());
    if new_h == h && new_w == w {
        return Ok(img.clone());
    }
    let sy = h as f64 / new_h as f64;
    let sx = w as f64 / new_w as f64;
    let mut out = Array3::zeros((new_h, new_w, c));
    for i in 0..new_h {
        let fy = ((i as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f64;
        for j in 0..new_w {
            let fx = ((j as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f64;
            for ch in 0..c {
                let top = img.pixels[[y0, x0, ch]] * (1.0 - wx) + img.pixels[[y0, x1, ch]] * wx;
                let bot = img.pixels[[y1, x0, ch]] * (1.0 - wx) + img.pixels[[y1, x1, ch]] * wx;
                out[[i, j, ch]] = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    Ok(Image {
        pixels: out,
        colorspace: img.colorspace,
    })
}
