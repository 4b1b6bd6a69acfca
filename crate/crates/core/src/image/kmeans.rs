//! K-means on chroma pairs and elbow selection of the mixture size.

use super::{convert_colorspace, resize_bilinear, Colorspace, Image};
use crate::{CoreError, Result};
use ndarray::Array2;
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const RESTARTS: u64 = 4;
const MAX_ITERS: usize = 100;
/// Chroma samples are pooled from images center-cropped to their middle half
/// and shrunk to at most this side length.
const POOL_SIDE: usize = 8;

/// Final within-cluster sum of squared distances of seeded k-means
/// (k-means++ init, best of a few restarts).
pub fn kmeans_inertia(points: &Array2<f64>, k: usize, seed: u64) -> f64 {
    let n = points.nrows();
    if n == 0 || k == 0 {
        return 0.0;
    }
    if k >= n {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for r in 0..RESTARTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(r));
        best = best.min(lloyd(points, k, &mut rng));
    }
    best
}

fn lloyd(points: &Array2<f64>, k: usize, rng: &mut ChaCha8Rng) -> f64 {
    let n = points.nrows();
    let d = points.ncols();
    let mut centers = plus_plus_init(points, k, rng);
    let mut assign = vec![0usize; n];
    let mut inertia = f64::INFINITY;
    for _ in 0..MAX_ITERS {
        let mut new_inertia = 0.0;
        for i in 0..n {
            let (mut bc, mut bd) = (0usize, f64::INFINITY);
            for c in 0..k {
                let dist = sq_dist(points, i, &centers, c, d);
                if dist < bd {
                    bd = dist;
                    bc = c;
                }
            }
            assign[i] = bc;
            new_inertia += bd;
        }
        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[assign[i]] += 1;
            for j in 0..d {
                sums[[assign[i], j]] += points[[i, j]];
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // Re-seed an empty cluster at the point farthest from its center.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = sq_dist(points, a, &centers, assign[a], d);
                        let db = sq_dist(points, b, &centers, assign[b], d);
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap();
                for j in 0..d {
                    centers[[c, j]] = points[[far, j]];
                }
            } else {
                for j in 0..d {
                    centers[[c, j]] = sums[[c, j]] / counts[c] as f64;
                }
            }
        }
        if (inertia - new_inertia).abs() <= 1e-12 * (1.0 + inertia.abs()) {
            inertia = new_inertia;
            break;
        }
        inertia = new_inertia;
    }
    inertia
}

fn plus_plus_init(points: &Array2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = points.nrows();
    let d = points.ncols();
    let mut centers = Array2::zeros((k, d));
    let first = rng.gen_range(0..n);
    centers.row_mut(0).assign(&points.row(first));
    let mut dists: Vec<f64> = (0..n).map(|i| sq_dist(points, i, &centers, 0, d)).collect();
    for c in 1..k {
        let total: f64 = dists.iter().sum();
        let pick = if total <= 0.0 {
            rng.gen_range(0..n)
        } else {
            WeightedIndex::new(&dists).map(|w| w.sample(rng)).unwrap_or(0)
        };
        centers.row_mut(c).assign(&points.row(pick));
        for i in 0..n {
            dists[i] = dists[i].min(sq_dist(points, i, &centers, c, d));
        }
    }
    centers
}

fn sq_dist(points: &Array2<f64>, i: usize, centers: &Array2<f64>, c: usize, d: usize) -> f64 {
    (0..d)
        .map(|j| {
            let v = points[[i, j]] - centers[[c, j]];
            v * v
        })
        .sum()
}

/// Pool (A, B) chroma pairs from center-cropped, shrunk normal images.
pub fn pooled_chroma(images: &[Image]) -> Result<Array2<f64>> {
    if images.is_empty() {
        return Err(CoreError::EmptyInput("no images for clustering".into()));
    }
    let mut rows = Vec::new();
    for img in images {
        let (h, w) = (img.height(), img.width());
        let (ch, cw) = ((h / 2).max(1), (w / 2).max(1));
        let cropped = img.crop((h - ch) / 2, (w - cw) / 2, ch, cw);
        let small = resize_bilinear(&cropped, ch.min(POOL_SIDE), cw.min(POOL_SIDE))?;
        let lab = convert_colorspace(&small, Colorspace::Lab)?;
        for row in lab.pixels.outer_iter() {
            for px in row.outer_iter() {
                rows.push([px[1], px[2]]);
            }
        }
    }
    let mut out = Array2::zeros((rows.len(), 2));
    for (i, r) in rows.iter().enumerate() {
        out[[i, 0]] = r[0];
        out[[i, 1]] = r[1];
    }
    Ok(out)
}

/// Pick the mixture size by the elbow of the k-means inertia curve over
/// `K ∈ [1, k_max]`: the K with the largest second difference, ties toward
/// smaller K. A flat curve (single color) yields 1.
pub fn choose_num_clusters(images: &[Image], k_max: usize, seed: u64) -> Result<usize> {
    let points = pooled_chroma(images)?;
    let k_max = k_max.max(1);
    let inertia: Vec<f64> = (1..=k_max).map(|k| kmeans_inertia(&points, k, seed)).collect();
    let scale = inertia[0].max(1.0);
    if inertia[0] <= 1e-9 * scale {
        return Ok(1);
    }
    if k_max <= 2 {
        return Ok(if inertia[k_max - 1] < 0.5 * inertia[0] { k_max } else { 1 });
    }
    let mut best_k = 2;
    let mut best = f64::NEG_INFINITY;
    for k in 2..k_max {
        let second = inertia[k - 2] - 2.0 * inertia[k - 1] + inertia[k];
        if second > best + 1e-12 * scale {
            best = second;
            best_k = k;
        }
    }
    Ok(best_k)
}
