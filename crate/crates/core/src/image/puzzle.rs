//! Puzzle-piece extraction and permutation.

use super::Image;
use crate::{CoreError, Result};
use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;

/// Grid layout of the puzzle task.
///
/// A piece's cell is `floor(H/n_h) x floor(W/n_w)`; its content region is
/// `floor(cell / (1 + 2 * margin_fraction))`, cropped from the cell either
/// centered (deterministic mode) or at a random offset within the margin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PuzzleGrid {
    pub n_w: usize,
    pub n_h: usize,
    pub margin_fraction: f64,
}

impl PuzzleGrid {
    pub fn new(n_w: usize, n_h: usize, margin_fraction: f64) -> Result<Self> {
        if n_w * n_h < 2 {
            return Err(CoreError::Config("puzzle grid needs n >= 2 pieces".into()));
        }
        if !(0.0..1.0).contains(&margin_fraction) {
            return Err(CoreError::Config(format!(
                "margin_fraction {margin_fraction} outside [0, 1)"
            )));
        }
        Ok(PuzzleGrid {
            n_w,
            n_h,
            margin_fraction,
        })
    }

    /// Total piece count `n = n_w * n_h`.
    pub fn n(&self) -> usize {
        self.n_w * self.n_h
    }

    /// Grid coordinate (row, col) of piece index `p` in row-major order.
    pub fn coord(&self, p: usize) -> (usize, usize) {
        (p / self.n_w, p % self.n_w)
    }

    /// n! saturated to `u64::MAX`.
    pub fn permutation_count(&self) -> u64 {
        let mut acc: u128 = 1;
        for k in 2..=self.n() as u128 {
            acc = acc.saturating_mul(k);
            if acc > u64::MAX as u128 {
                return u64::MAX;
            }
        }
        acc as u64
    }
}

/// A bijection on grid cells; `mapping[i]` is the new position of piece `i`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PiecePermutation {
    mapping: Vec<usize>,
}

impl PiecePermutation {
    pub fn new(mapping: Vec<usize>) -> Result<Self> {
        let n = mapping.len();
        let mut seen = vec![false; n];
        for &m in &mapping {
            if m >= n || seen[m] {
                return Err(CoreError::InvalidPermutation(format!("{mapping:?}")));
            }
            seen[m] = true;
        }
        Ok(PiecePermutation { mapping })
    }

    pub fn identity(n: usize) -> Self {
        PiecePermutation {
            mapping: (0..n).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.mapping.iter().enumerate().all(|(i, &m)| i == m)
    }

    /// New position of piece `i`.
    pub fn position_of(&self, i: usize) -> usize {
        self.mapping[i]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.mapping
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.mapping.len()];
        for (i, &m) in self.mapping.iter().enumerate() {
            inv[m] = i;
        }
        PiecePermutation { mapping: inv }
    }

    /// Composition `other ∘ self`: first move by `self`, then by `other`.
    pub fn then(&self, other: &PiecePermutation) -> Self {
        PiecePermutation {
            mapping: self.mapping.iter().map(|&m| other.mapping[m]).collect(),
        }
    }

    fn random(n: usize, rng: &mut impl Rng) -> Self {
        let mut mapping: Vec<usize> = (0..n).collect();
        mapping.shuffle(rng);
        PiecePermutation { mapping }
    }
}

/// Geometry of one extraction: where each piece's content came from.
#[derive(Debug, Clone)]
pub struct PieceGeometry {
    /// Content height and width of every piece.
    pub piece_h: usize,
    pub piece_w: usize,
    /// Cell height and width.
    pub cell_h: usize,
    pub cell_w: usize,
    /// Source (top, left) of each piece's content in the original image.
    pub origins: Vec<(usize, usize)>,
}

/// Split `img` into `n` equally sized pieces.
///
/// Without `jitter_seed` the content is the centered crop of each cell;
/// with a seed, crop offsets are drawn uniformly within the margin.
pub fn split_into_pieces(
    img: &Image,
    grid: &PuzzleGrid,
    jitter_seed: Option<u64>,
) -> Result<(Vec<Image>, PieceGeometry)> {
    let (h, w) = (img.height(), img.width());
    let cell_h = h / grid.n_h;
    let cell_w = w / grid.n_w;
    let denom = 1.0 + 2.0 * grid.margin_fraction;
    let piece_h = (cell_h as f64 / denom).floor() as usize;
    let piece_w = (cell_w as f64 / denom).floor() as usize;
    if piece_h == 0 || piece_w == 0 {
        return Err(CoreError::ImageTooSmall {
            height: h,
            width: w,
            n_h: grid.n_h,
            n_w: grid.n_w,
            margin: grid.margin_fraction,
        });
    }
    let mut rng = jitter_seed.map(ChaCha8Rng::seed_from_u64);
    let mut pieces = Vec::with_capacity(grid.n());
    let mut origins = Vec::with_capacity(grid.n());
    for p in 0..grid.n() {
        let (row, col) = grid.coord(p);
        let max_dy = cell_h - piece_h;
        let max_dx = cell_w - piece_w;
        let (dy, dx) = match rng.as_mut() {
            Some(r) => (r.gen_range(0..=max_dy), r.gen_range(0..=max_dx)),
            None => (max_dy / 2, max_dx / 2),
        };
        let top = row * cell_h + dy;
        let left = col * cell_w + dx;
        origins.push((top, left));
        pieces.push(img.crop(top, left, piece_h, piece_w));
    }
    Ok((
        pieces,
        PieceGeometry {
            piece_h,
            piece_w,
            cell_h,
            cell_w,
            origins,
        },
    ))
}

/// Reassemble pieces into a tiled image with piece `i` placed at cell
/// `perm.position_of(i)`. The identity permutation reproduces the tiling.
pub fn apply_permutation(pieces: &[Image], perm: &PiecePermutation, grid: &PuzzleGrid) -> Result<Image> {
    if pieces.len() != grid.n() || perm.len() != grid.n() {
        return Err(CoreError::PieceCountMismatch {
            expected: grid.n(),
            got: pieces.len().min(perm.len()),
        });
    }
    let ph = pieces[0].height();
    let pw = pieces[0].width();
    let c = pieces[0].channels();
    let mut out = Array3::zeros((grid.n_h * ph, grid.n_w * pw, c));
    for (i, piece) in pieces.iter().enumerate() {
        if piece.height() != ph || piece.width() != pw {
            return Err(CoreError::ShapeMismatch("pieces differ in size".into()));
        }
        let (row, col) = grid.coord(perm.position_of(i));
        out.slice_mut(ndarray::s![row * ph..(row + 1) * ph, col * pw..(col + 1) * pw, ..])
            .assign(&piece.pixels);
    }
    Ok(Image {
        pixels: out,
        colorspace: pieces[0].colorspace,
    })
}

/// Number of training permutations per image per epoch:
/// `max(1, round(n! / (N_train * ep)))`, capped at n!.
pub fn training_permutation_count(grid: &PuzzleGrid, n_train: usize, epochs: usize) -> u64 {
    let total = grid.permutation_count();
    let raw = total as f64 / (n_train as f64 * epochs as f64);
    (raw.round() as u64).clamp(1, total)
}

/// Draw `n_tsp` distinct permutations uniformly without replacement.
pub fn sample_training_permutations(
    grid: &PuzzleGrid,
    n_train: usize,
    epochs: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<PiecePermutation> {
    let n_tsp = training_permutation_count(grid, n_train, epochs);
    distinct_permutations(grid.n(), n_tsp as usize, rng, &mut HashSet::new())
}

/// Deterministic inference permutation list for a given seed.
///
/// The identity permutation is always element 0; the remaining entries are
/// distinct random permutations.
pub fn fixed_inference_permutations(
    grid: &PuzzleGrid,
    n_sp: usize,
    seed: u64,
) -> Result<Vec<PiecePermutation>> {
    let total = grid.permutation_count();
    if n_sp as u64 > total {
        return Err(CoreError::TooManyPermutations {
            requested: n_sp as u64,
            available: total,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let identity = PiecePermutation::identity(grid.n());
    let mut seen: HashSet<PiecePermutation> = HashSet::new();
    seen.insert(identity.clone());
    let mut out = vec![identity];
    if n_sp > 1 {
        out.extend(distinct_permutations(grid.n(), n_sp - 1, &mut rng, &mut seen));
    }
    Ok(out)
}

fn distinct_permutations(
    n: usize,
    count: usize,
    rng: &mut ChaCha8Rng,
    seen: &mut HashSet<PiecePermutation>,
) -> Vec<PiecePermutation> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let p = PiecePermutation::random(n, rng);
        if seen.insert(p.clone()) {
            out.push(p);
        }
    }
    out
}
