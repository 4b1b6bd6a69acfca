//! Piece-attention normalization and spatial centroid.

use crate::error::CoreError;
use crate::Result;
use crate::image::PuzzleGrid;

/// L1-normalized sigmoid attention over puzzle cells, with the spatial
/// centroid of the resulting distribution in (row, col) cell coordinates.
#[derive(Debug, Clone)]
pub struct AttentionMap {
    /// One probability per cell, sums to 1.
    pub p: Vec<f64>,
    /// Probability-weighted mean of integer cell coordinates.
    pub centroid: (f64, f64),
}

/// Maps raw attention logits `w` to `P_i = sigmoid(w_i) / sum_j sigmoid(w_j)`
/// and computes the centroid `mu = sum_i P_i * (row_i, col_i)` on `grid`.
pub fn normalize_attention(logits: &[f64], grid: &PuzzleGrid) -> Result<AttentionMap> {
    if logits.len() != grid.n() {
        return Err(CoreError::ShapeMismatch(format!(
            "expected {} attention logits, got {}",
            grid.n(),
            logits.len()
        )));
    }
    let sig: Vec<f64> = logits
        .iter()
        .map(|&w| {
            if w >= 0.0 {
                1.0 / (1.0 + (-w).exp())
            } else {
                let e = w.exp();
                e / (1.0 + e)
            }
        })
        .collect();
    let total: f64 = sig.iter().sum();
    // sigmoid > 0 for all finite inputs, so total > 0 whenever n >= 1.
    let p: Vec<f64> = sig.iter().map(|s| s / total).collect();
    let mut mu = (0.0, 0.0);
    for (i, &pi) in p.iter().enumerate() {
        let (r, c) = grid.coord(i);
        mu.0 += pi * r as f64;
        mu.1 += pi * c as f64;
    }
    Ok(AttentionMap { p, centroid: mu })
}
