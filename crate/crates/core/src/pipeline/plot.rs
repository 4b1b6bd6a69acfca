//! Minimal plot rendering: an ROC curve and a two-class score histogram as
//! PNG files. Hand-drawn on a pixel canvas; no plotting dependency.

use crate::{CoreError, Result};
use image::{Rgb, RgbImage};
use std::path::Path;

const WIDTH: u32 = 480;
const HEIGHT: u32 = 360;
const MARGIN: u32 = 40;

const BG: Rgb<u8> = Rgb([255, 255, 255]);
const AXIS: Rgb<u8> = Rgb([60, 60, 60]);
const GRID: Rgb<u8> = Rgb([210, 210, 210]);
const CURVE: Rgb<u8> = Rgb([30, 90, 200]);
const NORMAL: Rgb<u8> = Rgb([70, 130, 220]);
const ANOMALY: Rgb<u8> = Rgb([220, 80, 60]);

struct Canvas {
    img: RgbImage,
}

impl Canvas {
    fn new() -> Canvas {
        Canvas {
            img: RgbImage::from_pixel(WIDTH, HEIGHT, BG),
        }
    }

    fn put(&mut self, x: i64, y: i64, color: Rgb<u8>) {
        if (0..WIDTH as i64).contains(&x) && (0..HEIGHT as i64).contains(&y) {
            self.img.put_pixel(x as u32, y as u32, color);
        }
    }

    /// Map unit coordinates (origin bottom-left) to pixels in the plot box.
    fn to_px(&self, u: f64, v: f64) -> (i64, i64) {
        let w = (WIDTH - 2 * MARGIN) as f64;
        let h = (HEIGHT - 2 * MARGIN) as f64;
        let x = MARGIN as f64 + u.clamp(0.0, 1.0) * w;
        let y = (HEIGHT - MARGIN) as f64 - v.clamp(0.0, 1.0) * h;
        (x.round() as i64, y.round() as i64)
    }

    fn line(&mut self, a: (f64, f64), b: (f64, f64), color: Rgb<u8>, dashed: bool) {
        let (x0, y0) = self.to_px(a.0, a.1);
        let (x1, y1) = self.to_px(b.0, b.1);
        let steps = (x1 - x0).abs().max((y1 - y0).abs()).max(1);
        for s in 0..=steps {
            if dashed && (s / 4) % 2 == 1 {
                continue;
            }
            let t = s as f64 / steps as f64;
            let x = x0 as f64 + t * (x1 - x0) as f64;
            let y = y0 as f64 + t * (y1 - y0) as f64;
            self.put(x.round() as i64, y.round() as i64, color);
        }
    }

    fn axes(&mut self) {
        for frac in [0.25, 0.5, 0.75] {
            self.line((frac, 0.0), (frac, 1.0), GRID, false);
            self.line((0.0, frac), (1.0, frac), GRID, false);
        }
        self.line((0.0, 0.0), (1.0, 0.0), AXIS, false);
        self.line((0.0, 0.0), (0.0, 1.0), AXIS, false);
        self.line((1.0, 0.0), (1.0, 1.0), AXIS, false);
        self.line((0.0, 1.0), (1.0, 1.0), AXIS, false);
    }

    fn bar(&mut self, u0: f64, u1: f64, height: f64, color: Rgb<u8>) {
        let (x0, _) = self.to_px(u0, 0.0);
        let (x1, y_top) = self.to_px(u1, height);
        let (_, y_base) = self.to_px(0.0, 0.0);
        for x in x0..=x1 {
            for y in y_top..=y_base {
                // Blend so overlapping normal/anomaly mass stays visible.
                let px = self.img.get_pixel(x.max(0) as u32 % WIDTH, y.max(0) as u32 % HEIGHT);
                let blended = Rgb([
                    px.0[0].min(color.0[0]),
                    px.0[1].min(color.0[1]),
                    px.0[2].min(color.0[2]),
                ]);
                self.put(x, y, blended);
            }
        }
    }

    fn save(self, path: &Path) -> Result<()> {
        self.img
            .save(path)
            .map_err(|e| CoreError::Data(format!("cannot write {}: {e}", path.display())))
    }
}

/// Draw `(threshold, fpr, tpr)` points as an ROC curve with the chance
/// diagonal.
pub fn roc_plot_png(points: &[(f64, f64, f64)], path: &Path) -> Result<()> {
    if points.is_empty() {
        return Err(CoreError::EmptyInput("no roc points to plot".into()));
    }
    let mut canvas = Canvas::new();
    canvas.axes();
    canvas.line((0.0, 0.0), (1.0, 1.0), GRID, true);
    for pair in points.windows(2) {
        let (_, fpr0, tpr0) = pair[0];
        let (_, fpr1, tpr1) = pair[1];
        canvas.line((fpr0, tpr0), (fpr1, tpr1), CURVE, false);
        canvas.line((fpr0, tpr0 + 0.003), (fpr1, tpr1 + 0.003), CURVE, false);
    }
    canvas.save(path)
}

/// Overlaid 20-bin histograms of normal and anomaly fused scores.
pub fn histogram_png(normal: &[f64], anomaly: &[f64], path: &Path) -> Result<()> {
    if normal.is_empty() || anomaly.is_empty() {
        return Err(CoreError::EmptyInput("histogram needs both classes".into()));
    }
    let bins = 20usize;
    let all = normal.iter().chain(anomaly).copied();
    let lo = all.clone().fold(f64::INFINITY, f64::min);
    let hi = all.fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let fill = |scores: &[f64]| {
        let mut counts = vec![0usize; bins];
        for &s in scores {
            let b = (((s - lo) / span) * bins as f64) as usize;
            counts[b.min(bins - 1)] += 1;
        }
        counts
    };
    let n_counts = fill(normal);
    let a_counts = fill(anomaly);
    let peak = n_counts
        .iter()
        .chain(&a_counts)
        .copied()
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let mut canvas = Canvas::new();
    canvas.axes();
    for b in 0..bins {
        let u0 = b as f64 / bins as f64 + 0.002;
        let u1 = (b + 1) as f64 / bins as f64 - 0.002;
        if n_counts[b] > 0 {
            canvas.bar(u0, u1, 0.95 * n_counts[b] as f64 / peak, NORMAL);
        }
        if a_counts[b] > 0 {
            canvas.bar(u0, u1, 0.95 * a_counts[b] as f64 / peak, ANOMALY);
        }
    }
    canvas.save(path)
}
