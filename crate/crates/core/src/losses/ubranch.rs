//! Discriminative-branch objectives: puzzle cross-entropy, expected-L1 tint
//! loss, attention density term, and their combination.

use crate::autodiff::Var;
use crate::error::CoreError;
use crate::image::{tint_reconstruction_errors, Image, PiecePermutation, PuzzleGrid, TintAngle};
use crate::Result;
use ndarray::{Array2, ArrayD, IxDyn};

/// Default weight of the density term inside the combined branch loss.
pub const LAMBDA_DENSITY_DEFAULT: f64 = 0.1;

/// Mean cross-entropy over pieces and batch: head i of sample b is scored
/// against the cell holding piece i under that sample's permutation.
/// `puzzle_logits` is `[B, n, n]`.
pub fn puzzle_loss<'t>(
    puzzle_logits: Var<'t>,
    perms: &[PiecePermutation],
) -> Result<Var<'t>> {
    let shape = puzzle_logits.shape();
    if shape.len() != 3 || shape[1] != shape[2] {
        return Err(CoreError::ShapeMismatch(format!(
            "expected [B, n, n] puzzle logits, got {shape:?}"
        )));
    }
    let (bsz, n) = (shape[0], shape[1]);
    if perms.len() != bsz {
        return Err(CoreError::ShapeMismatch(format!(
            "{} permutations for batch of {bsz}",
            perms.len()
        )));
    }
    let mut onehot = ArrayD::zeros(IxDyn(&[bsz, n, n]));
    for (b, perm) in perms.iter().enumerate() {
        if perm.as_slice().len() != n {
            return Err(CoreError::PieceCountMismatch {
                expected: n,
                got: perm.as_slice().len(),
            });
        }
        for piece in 0..n {
            onehot[[b, piece, perm.position_of(piece)]] = 1.0;
        }
    }
    let tape = puzzle_logits.tape();
    let picked = tape
        .constant(onehot)
        .mul(puzzle_logits.log_softmax(2))
        .sum_all();
    Ok(picked.mul_scalar(-1.0 / (bsz * n) as f64))
}

/// Expected reconstruction error under the predicted rotation distribution:
/// `sum_k softmax(logits)_k * err_k` with the errors constant with respect
/// to the parameters. `logits` is `[c]`.
pub fn tint_loss_from_errors<'t>(logits: Var<'t>, errors: &[f64]) -> Result<Var<'t>> {
    let shape = logits.shape();
    if shape.len() != 1 || shape[0] != errors.len() {
        return Err(CoreError::ShapeMismatch(format!(
            "expected [{}] tint logits, got {shape:?}",
            errors.len()
        )));
    }
    let tape = logits.tape();
    let errs = tape.constant(ArrayD::from_shape_vec(IxDyn(&[errors.len()]), errors.to_vec()).unwrap());
    Ok(logits.softmax(0).mul(errs).sum_all())
}

/// [`tint_loss_from_errors`] with the reconstruction errors computed from the
/// piece and the rotation `applied` to it.
pub fn tint_loss<'t>(logits: Var<'t>, piece: &Image, applied: TintAngle) -> Result<Var<'t>> {
    let errors = tint_reconstruction_errors(piece, applied)?;
    tint_loss_from_errors(logits, &errors)
}

/// Negated attention dispersion, averaged over the batch:
/// `-(1/B) sum_b sum_i P_bi * ||coord_i - mu_b||_2` where `P` is the
/// L1-normalized sigmoid of `attention_logits` (`[B, n]`) and
/// `mu_b = sum_i P_bi * coord_i`. Always <= 0; minimizing encourages spread.
pub fn density_loss_with_coords<'t>(
    attention_logits: Var<'t>,
    coords: &Array2<f64>,
) -> Result<Var<'t>> {
    let shape = attention_logits.shape();
    if shape.len() != 2 || coords.dim() != (shape[1], 2) {
        return Err(CoreError::ShapeMismatch(format!(
            "expected [B, n] logits with [n, 2] coords, got {shape:?} and {:?}",
            coords.dim()
        )));
    }
    let (bsz, n) = (shape[0], shape[1]);
    let p = normalized_attention_var(attention_logits);
    let tape = attention_logits.tape();
    let coords_v = tape.constant(coords.clone().into_dyn());
    // mu = P @ coords: [B, 2].
    let mu = p.matmul(coords_v);
    // Differences computed directly to keep exact zeros at the centroid.
    let mut tiled = ArrayD::zeros(IxDyn(&[bsz, n, 2]));
    for b in 0..bsz {
        for i in 0..n {
            tiled[[b, i, 0]] = coords[[i, 0]];
            tiled[[b, i, 1]] = coords[[i, 1]];
        }
    }
    let diff = tape.constant(tiled).sub(mu.reshape(&[bsz, 1, 2]));
    let dist = diff
        .mul(diff)
        .sum_axis_keep(2)
        .reshape(&[bsz, n])
        .sqrt_guard();
    Ok(p.mul(dist).sum_all().mul_scalar(-1.0 / bsz as f64))
}

/// [`density_loss_with_coords`] on the integer cell coordinates of `grid`.
pub fn density_loss<'t>(attention_logits: Var<'t>, grid: &PuzzleGrid) -> Result<Var<'t>> {
    density_loss_with_coords(attention_logits, &grid_coords(grid))
}

pub fn grid_coords(grid: &PuzzleGrid) -> Array2<f64> {
    let n = grid.n();
    let mut coords = Array2::zeros((n, 2));
    for i in 0..n {
        let (r, c) = grid.coord(i);
        coords[[i, 0]] = r as f64;
        coords[[i, 1]] = c as f64;
    }
    coords
}

/// Attention probabilities on the tape: `sigmoid(w) / sum sigmoid(w)` per row.
fn normalized_attention_var(logits: Var<'_>) -> Var<'_> {
    let sig = logits.sigmoid();
    sig.div(sig.sum_axis_keep(1))
}

/// Per-sample training targets for the combined branch loss.
pub struct UBranchBatch {
    /// Permutation applied to each sample's pieces.
    pub perms: Vec<PiecePermutation>,
    /// `[n, c]` tint reconstruction errors per sample, row i for piece i.
    pub tint_errors: Vec<Array2<f64>>,
}

/// Combined loss `L_puzzle + lambda * L_density + intra-piece term`, where
/// the intra-piece term weights each piece's tint loss by the attention
/// probability of the cell the piece occupies.
pub fn ubranch_loss<'t>(
    puzzle_logits: Var<'t>,
    tint_logits: Var<'t>,
    attention_logits: Var<'t>,
    batch: &UBranchBatch,
    grid: &PuzzleGrid,
    lambda_density: f64,
) -> Result<Var<'t>> {
    let pshape = puzzle_logits.shape();
    let tshape = tint_logits.shape();
    let (bsz, n) = (pshape[0], grid.n());
    if tshape.len() != 3 || tshape[0] != bsz || tshape[1] != n {
        return Err(CoreError::ShapeMismatch(format!(
            "expected [{bsz}, {n}, c] tint logits, got {tshape:?}"
        )));
    }
    let c = tshape[2];
    if batch.perms.len() != bsz || batch.tint_errors.len() != bsz {
        return Err(CoreError::ShapeMismatch(format!(
            "batch targets sized {}/{} for batch of {bsz}",
            batch.perms.len(),
            batch.tint_errors.len()
        )));
    }
    let tape = puzzle_logits.tape();

    let pzl = puzzle_loss(puzzle_logits, &batch.perms)?;
    let density = density_loss(attention_logits, grid)?;

    // Per-piece tint losses: [B, n].
    let mut errs = ArrayD::zeros(IxDyn(&[bsz, n, c]));
    for (b, e) in batch.tint_errors.iter().enumerate() {
        if e.dim() != (n, c) {
            return Err(CoreError::ShapeMismatch(format!(
                "expected [{n}, {c}] tint errors, got {:?}",
                e.dim()
            )));
        }
        for i in 0..n {
            for j in 0..c {
                errs[[b, i, j]] = e[[i, j]];
            }
        }
    }
    let tint_per_piece = tint_logits
        .softmax(2)
        .mul(tape.constant(errs))
        .sum_axis_keep(2)
        .reshape(&[bsz, n]);

    // Gather attention at each piece's cell: G[b, p, q] = [q == perm_b(p)].
    let mut gather = ArrayD::zeros(IxDyn(&[bsz, n, n]));
    for (b, perm) in batch.perms.iter().enumerate() {
        for piece in 0..n {
            gather[[b, piece, perm.position_of(piece)]] = 1.0;
        }
    }
    let p = normalized_attention_var(attention_logits); // [B, n] over cells
    let p_piece = tape
        .constant(gather)
        .mul(p.reshape(&[bsz, 1, n]))
        .sum_axis_keep(2)
        .reshape(&[bsz, n]);
    let intra = p_piece.mul(tint_per_piece).sum_all().mul_scalar(1.0 / bsz as f64);

    Ok(pzl.add(density.mul_scalar(lambda_density)).add(intra))
}
