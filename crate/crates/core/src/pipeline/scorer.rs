//! Scoring a trained model: every image yields `n_sp` position scores, `n`
//! tint scores and one colorization score, which calibration maps onto a
//! common percentile scale before fusion.

use super::config::PuzzleOod;
use super::inputs::{color_input_batch, normalized_tensor, stack_images};
use super::trainer::{prepare_image, TrainedModel};
use crate::autodiff::Tape;
use crate::image::{apply_permutation, split_into_pieces, Image, TintAngle};
use crate::network::GmmParamMap;
use crate::scoring::{
    calibrate, calibrate_and_fuse, colorization_score, fit_class_stats, puzzle_permutation_score,
    softmax_vec, tint_anomaly_score, ClassStats, OodMethod, OodScore, TaskId,
};
use crate::{CoreError, Result};
use ndarray::{Array2, ArrayD, Axis, Ix2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One CSV row: a raw task score and its calibrated percentile.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub task: TaskId,
    pub sub_index: usize,
    pub raw: f64,
    pub calibrated: f64,
}

/// All scores of one image plus the fused anomaly score.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageScore {
    pub image_id: String,
    pub rows: Vec<ScoreRow>,
    pub fused: f64,
}

/// Position and tint head outputs for all inference permutations of one
/// image, evaluated in a single batch.
struct UForward {
    /// `[n_sp, n, n]` position logits.
    puzzle: ArrayD<f64>,
    /// `[n_sp, n, c]` tint logits.
    tint: ArrayD<f64>,
    /// Deterministic center-crop pieces in natural order.
    pieces: Vec<Image>,
}

fn u_forward(model: &mut TrainedModel, img: &Image) -> Result<UForward> {
    let grid = model.grid()?;
    let (pieces, _) = split_into_pieces(img, &grid, None)?;
    let tensors = model
        .inference_perms
        .iter()
        .map(|perm| {
            apply_permutation(&pieces, perm, &grid)
                .map(|asm| normalized_tensor(&asm, &model.channel_mean, &model.channel_std))
        })
        .collect::<Result<Vec<_>>>()?;
    let x = stack_images(&tensors);
    let tape = Tape::new_no_grad();
    // Dropout is inert in evaluation mode; the generator is never advanced.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (out, _bind) = model.ubranch.forward(&tape, &x, false, &mut rng)?;
    Ok(UForward {
        puzzle: (*out.puzzle.value()).clone(),
        tint: (*out.tint.value()).clone(),
        pieces,
    })
}

/// Raw (uncalibrated) task scores for one image, in CSV row order:
/// `n_sp` position scores, then `n` tint scores, then the colorization
/// score. Puzzle-only models emit just the position scores.
pub fn raw_scores(model: &mut TrainedModel, img: &Image) -> Result<Vec<OodScore>> {
    if model.config.puzzle_ood == PuzzleOod::Mahalanobis && model.class_stats.is_none() {
        return Err(CoreError::Checkpoint(
            "configured for mahalanobis scoring but no class statistics are fitted".into(),
        ));
    }
    let img = prepare_image(img, model.config.resize)?;
    let fwd = u_forward(&mut *model, &img)?;
    let n = model.config.n();
    let mut scores = Vec::with_capacity(model.config.n_sp + n + 1);
    {
        let ood = match model.config.puzzle_ood {
            PuzzleOod::SoftmaxTruth => OodMethod::SoftmaxTruth,
            PuzzleOod::Mahalanobis => OodMethod::Mahalanobis(model.class_stats.as_ref().unwrap()),
        };
        for (i, perm) in model.inference_perms.iter().enumerate() {
            let logits = Array2::from_shape_fn((n, n), |(r, c)| fwd.puzzle[[i, r, c]]);
            scores.push(puzzle_permutation_score(&logits, perm, &ood, i)?);
        }
    }
    if model.config.puzzle_only {
        return Ok(scores);
    }
    // Tint scores come from the identity assembly, which is always element
    // 0 of the fixed permutation set; raw images carry tint index 0.
    debug_assert!(model.inference_perms[0].is_identity());
    let theta0 = TintAngle::new(0, model.config.c)?;
    for (p, piece) in fwd.pieces.iter().enumerate() {
        let logits: Vec<f64> = (0..model.config.c).map(|j| fwd.tint[[0, p, j]]).collect();
        scores.push(tint_anomaly_score(&logits, piece, theta0, p)?);
    }
    let lbranch = model.lbranch.as_ref().ok_or_else(|| {
        CoreError::Checkpoint("model has no colorization branch but is not puzzle-only".into())
    })?;
    let color = color_input_batch(&[&img], model.config.alpha)?;
    let tape = Tape::new_no_grad();
    let (out, _bind) = lbranch.forward(&tape, &color.x)?;
    let channels = out.value().index_axis(Axis(0), 0).to_owned();
    let gmm = GmmParamMap::from_channels(&channels, model.k)?;
    let to2 = |t: &ArrayD<f64>| -> Result<Array2<f64>> {
        t.index_axis(Axis(0), 0)
            .to_owned()
            .into_dimensionality::<Ix2>()
            .map_err(|e| CoreError::ShapeMismatch(e.to_string()))
    };
    scores.push(colorization_score(
        &gmm,
        &to2(&color.target_a)?,
        &to2(&color.target_b)?,
        &color.masks[0],
    )?);
    Ok(scores)
}

/// Fit class-conditional Gaussians over the position heads' softmax
/// responses: every head of every permutation forward contributes one
/// response vector labeled with the piece's true cell.
pub(crate) fn fit_position_stats(model: &mut TrainedModel, images: &[&Image]) -> Result<ClassStats> {
    let n = model.config.n();
    let mut flat = Vec::new();
    let mut labels = Vec::new();
    for img in images {
        let img = prepare_image(img, model.config.resize)?;
        let fwd = u_forward(&mut *model, &img)?;
        for (i, perm) in model.inference_perms.iter().enumerate() {
            for p in 0..n {
                let row: Vec<f64> = (0..n).map(|q| fwd.puzzle[[i, p, q]]).collect();
                flat.extend(softmax_vec(&row));
                labels.push(perm.position_of(p));
            }
        }
    }
    let count = labels.len();
    let vectors = Array2::from_shape_vec((count, n), flat)
        .map_err(|e| CoreError::ShapeMismatch(e.to_string()))?;
    fit_class_stats(&vectors, &labels)
}

pub fn score_image(model: &mut TrainedModel, image_id: &str, img: &Image) -> Result<ImageScore> {
    let raw = raw_scores(model, img)?;
    let rows = raw
        .iter()
        .map(|s| {
            Ok(ScoreRow {
                task: s.task_id,
                sub_index: s.sub_index,
                raw: s.value,
                calibrated: calibrate(&model.calibration, s)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let fused = calibrate_and_fuse(&model.calibration, &raw, model.config.fusion)?;
    Ok(ImageScore {
        image_id: image_id.to_string(),
        rows,
        fused,
    })
}

pub fn score_images(model: &mut TrainedModel, items: &[(String, Image)]) -> Result<Vec<ImageScore>> {
    items
        .iter()
        .map(|(id, img)| score_image(model, id, img))
        .collect()
}

// --- CSV emission and parsing ---

pub const SCORES_CSV_HEADER: &str = "image_id,task_id,sub_index,raw,calibrated";
pub const FUSED_CSV_HEADER: &str = "image_id,anomaly_score";

pub fn scores_csv(items: &[ImageScore]) -> String {
    let mut out = String::from(SCORES_CSV_HEADER);
    out.push('\n');
    for item in items {
        for row in &item.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                item.image_id, row.task, row.sub_index, row.raw, row.calibrated
            ));
        }
    }
    out
}

pub fn fused_csv(items: &[ImageScore]) -> String {
    let mut out = String::from(FUSED_CSV_HEADER);
    out.push('\n');
    for item in items {
        out.push_str(&format!("{},{}\n", item.image_id, item.fused));
    }
    out
}

fn csv_fail(line: usize, msg: &str) -> CoreError {
    CoreError::Data(format!("csv line {}: {msg}", line + 1))
}

pub fn parse_scores_csv(text: &str) -> Result<Vec<(String, TaskId, usize, f64, f64)>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == SCORES_CSV_HEADER => {}
        _ => return Err(CoreError::Data(format!("expected header {SCORES_CSV_HEADER:?}"))),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(csv_fail(i, "expected 5 fields"));
        }
        let task: TaskId = f[1].parse()?;
        let sub: usize = f[2].parse().map_err(|_| csv_fail(i, "bad sub_index"))?;
        let raw: f64 = f[3].parse().map_err(|_| csv_fail(i, "bad raw score"))?;
        let cal: f64 = f[4].parse().map_err(|_| csv_fail(i, "bad calibrated score"))?;
        rows.push((f[0].to_string(), task, sub, raw, cal));
    }
    Ok(rows)
}

pub fn parse_fused_csv(text: &str) -> Result<Vec<(String, f64)>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == FUSED_CSV_HEADER => {}
        _ => return Err(CoreError::Data(format!("expected header {FUSED_CSV_HEADER:?}"))),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let (id, score) = line.split_once(',').ok_or_else(|| csv_fail(i, "expected 2 fields"))?;
        let score: f64 = score.parse().map_err(|_| csv_fail(i, "bad score"))?;
        rows.push((id.to_string(), score));
    }
    Ok(rows)
}
