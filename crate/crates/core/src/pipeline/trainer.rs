//! Two-branch trainer: the discriminative branch learns piece positions,
//! tint rotations, and an attention map; the generative branch learns a
//! per-pixel chroma mixture by stochastic EM. The branches share no
//! parameters and each gets its own optimizer.

use super::config::{KChoice, PuzzleOod, RunConfig};
use super::inputs::{color_input_batch, normalized_tensor, stack_images};
use crate::autodiff::{Gradients, Tape};
use crate::image::{
    apply_permutation, choose_num_clusters, fixed_inference_permutations, resize_bilinear,
    sample_training_permutations, split_into_pieces, tint_reconstruction_errors, tint_rotate,
    Image, PiecePermutation, PuzzleGrid, TintAngle,
};
use crate::losses::{em_mahalanobis, em_posteriors, em_q_loss, puzzle_loss, ubranch_loss, GmmVars, UBranchBatch};
use crate::network::{
    Binding, ColorHead, CosineSchedule, EncoderConfig, LBranchConfig, LBranchModel, ParamStore,
    SgdNesterov, UBranchModel,
};
use crate::scoring::{CalibrationTable, ClassStats, TaskId};
use crate::{CoreError, Result};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Mean losses for one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub u_loss: f64,
    pub l_loss: f64,
}

/// Everything needed to score images: both trained branches plus the fitted
/// scoring state. The checkpoint codec persists all fields except the
/// training logs.
pub struct TrainedModel {
    pub config: RunConfig,
    pub normal_class: String,
    /// Mixture size actually used (resolves `KChoice::Auto`).
    pub k: usize,
    pub channel_mean: [f64; 3],
    pub channel_std: [f64; 3],
    pub ubranch: UBranchModel,
    /// Absent in puzzle-only ablation runs.
    pub lbranch: Option<LBranchModel>,
    pub inference_perms: Vec<PiecePermutation>,
    pub calibration: CalibrationTable,
    /// Present when the position task scores with Mahalanobis distances.
    pub class_stats: Option<ClassStats>,
    /// Per-epoch mean losses (not persisted).
    pub train_log: Vec<EpochLog>,
    /// Per-step discriminative losses (not persisted).
    pub step_log: Vec<f64>,
}

impl TrainedModel {
    pub fn grid(&self) -> Result<PuzzleGrid> {
        PuzzleGrid::new(self.config.n_w, self.config.n_h, self.config.margin_fraction)
    }
}

pub(crate) fn encoder_config(config: &RunConfig) -> EncoderConfig {
    EncoderConfig {
        backbone: config.backbone,
        n_w: config.n_w,
        n_h: config.n_h,
        c: config.c,
        dropout: config.dropout,
        input_channels: 3,
    }
}

pub(crate) fn lbranch_config(k: usize) -> LBranchConfig {
    LBranchConfig {
        head: ColorHead::Gmm { k },
        base_width: 16,
    }
}

pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Deterministic subsample of `limit` items, order-preserving.
fn subsample_limit<T: Clone>(items: &[T], limit: usize, seed: u64) -> Vec<T> {
    if limit == 0 || limit >= items.len() {
        return items.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0xa076_1d64_78bd_642f));
    let mut idx: Vec<usize> = (0..items.len()).collect();
    for i in 0..limit {
        let j = rng.gen_range(i..idx.len());
        idx.swap(i, j);
    }
    let mut keep: Vec<usize> = idx[..limit].to_vec();
    keep.sort_unstable();
    keep.into_iter().map(|i| items[i].clone()).collect()
}

/// Split normals into (calibration, fit) sets: images are ordered by the
/// hash of their id and the top `fraction` becomes the calibration holdout.
/// The id hash makes the split a pure function of the dataset, not of load
/// order.
fn calibration_split(
    normals: &[(String, Image)],
    fraction: f64,
) -> Result<(Vec<(String, Image)>, Vec<(String, Image)>)> {
    let n_cal = ((normals.len() as f64) * fraction).ceil() as usize;
    if n_cal >= normals.len() {
        return Err(CoreError::Data(format!(
            "{} normals cannot spare {n_cal} for calibration",
            normals.len()
        )));
    }
    let mut order: Vec<usize> = (0..normals.len()).collect();
    order.sort_by(|&a, &b| {
        let ha = fnv1a64(normals[a].0.as_bytes());
        let hb = fnv1a64(normals[b].0.as_bytes());
        ha.cmp(&hb).then_with(|| normals[a].0.cmp(&normals[b].0))
    });
    let cut = normals.len() - n_cal;
    let mut fit_idx: Vec<usize> = order[..cut].to_vec();
    let mut cal_idx: Vec<usize> = order[cut..].to_vec();
    // Canonical output order (by id) so downstream streams are identical
    // however the caller enumerated the images.
    fit_idx.sort_by(|&a, &b| normals[a].0.cmp(&normals[b].0));
    cal_idx.sort_by(|&a, &b| normals[a].0.cmp(&normals[b].0));
    let pick = |idx: &[usize]| idx.iter().map(|&i| normals[i].clone()).collect::<Vec<_>>();
    Ok((pick(&cal_idx), pick(&fit_idx)))
}

/// Per-channel mean and standard deviation over all pixels.
fn channel_stats(images: &[(String, Image)]) -> ([f64; 3], [f64; 3]) {
    let mut sum = [0.0; 3];
    let mut sumsq = [0.0; 3];
    let mut count = 0.0;
    for (_, img) in images {
        for r in 0..img.height() {
            for c in 0..img.width() {
                for ch in 0..3 {
                    let v = img.pixels[[r, c, ch]];
                    sum[ch] += v;
                    sumsq[ch] += v * v;
                }
            }
        }
        count += (img.height() * img.width()) as f64;
    }
    let mut mean = [0.0; 3];
    let mut std = [0.0; 3];
    for ch in 0..3 {
        mean[ch] = sum[ch] / count;
        std[ch] = (sumsq[ch] / count - mean[ch] * mean[ch]).max(0.0).sqrt().max(1e-6);
    }
    (mean, std)
}

fn apply_step(
    opt: &mut SgdNesterov,
    store: &mut ParamStore,
    bind: &Binding<'_>,
    grads: &Gradients,
    lr: f64,
) {
    for name in bind.trainable_names() {
        if let Some(g) = grads.get(bind.var(name)) {
            opt.step(store, name, g, lr);
        }
    }
}

/// Assemble one discriminative-branch batch: per image, draw a permutation,
/// per-piece tints and crop jitter, and return the normalized tensors with
/// the loss targets. `puzzle_only` skips tinting.
#[allow(clippy::too_many_arguments)]
fn build_ubranch_batch(
    images: &[&Image],
    perms: &[PiecePermutation],
    grid: &PuzzleGrid,
    config: &RunConfig,
    mean: &[f64; 3],
    std: &[f64; 3],
    rng: &mut ChaCha8Rng,
) -> Result<(ndarray::ArrayD<f64>, UBranchBatch)> {
    let n = grid.n();
    let mut tensors = Vec::with_capacity(images.len());
    let mut batch_perms = Vec::with_capacity(images.len());
    let mut tint_errors = Vec::with_capacity(images.len());
    for img in images {
        let perm = perms[rng.gen_range(0..perms.len())].clone();
        let (pieces, _) = split_into_pieces(img, grid, Some(rng.gen()))?;
        let (pieces, errors) = if config.puzzle_only {
            (pieces, Array2::zeros((n, config.c)))
        } else {
            let mut tinted = Vec::with_capacity(n);
            let mut errors = Array2::zeros((n, config.c));
            for (p, piece) in pieces.iter().enumerate() {
                let theta = TintAngle::new(rng.gen_range(0..config.c), config.c)?;
                let tp = tint_rotate(piece, theta)?;
                for (j, e) in tint_reconstruction_errors(&tp, theta)?.into_iter().enumerate() {
                    errors[[p, j]] = e;
                }
                tinted.push(tp);
            }
            (tinted, errors)
        };
        let assembled = apply_permutation(&pieces, &perm, grid)?;
        tensors.push(normalized_tensor(&assembled, mean, std));
        batch_perms.push(perm);
        tint_errors.push(errors);
    }
    Ok((
        stack_images(&tensors),
        UBranchBatch {
            perms: batch_perms,
            tint_errors,
        },
    ))
}

/// Train both branches on the normal class of `data`, then fit the scoring
/// state (inference permutations, optional position-response statistics,
/// and the per-task calibration tables) on the held-out calibration split.
pub fn train(config: &RunConfig, data: &LoadedData<'_>, normal_class: usize) -> Result<TrainedModel> {
    config.validate()?;
    let class_name = data
        .class_names
        .get(normal_class)
        .ok_or_else(|| CoreError::Data(format!("normal class index {normal_class} out of range")))?
        .clone();
    let raw_normals = data.train.get(normal_class).filter(|v| !v.is_empty()).ok_or_else(|| {
        CoreError::Data(format!("no training images for class {class_name:?}"))
    })?;
    let mut normals = Vec::with_capacity(raw_normals.len());
    for (id, img) in raw_normals.iter() {
        normals.push(((*id).clone(), prepare_image(img, config.resize)?));
    }
    let normals = subsample_limit(&normals, config.train_limit, config.seed);
    let (cal_set, fit_set) = calibration_split(&normals, config.calibration_fraction)?;

    let (channel_mean, channel_std) = channel_stats(&fit_set);
    let grid = PuzzleGrid::new(config.n_w, config.n_h, config.margin_fraction)?;
    let k = if config.puzzle_only {
        1
    } else {
        match config.k {
            KChoice::Fixed(k) => k,
            KChoice::Auto { k_max } => {
                let imgs: Vec<Image> = fit_set.iter().map(|(_, img)| img.clone()).collect();
                choose_num_clusters(&imgs, k_max, config.seed)?
            }
        }
    };

    let mut ubranch = UBranchModel::new(encoder_config(config), config.seed);
    let mut lbranch = if config.puzzle_only {
        None
    } else {
        Some(LBranchModel::new(lbranch_config(k), config.seed.wrapping_add(1)))
    };

    let steps_per_epoch = fit_set.len().div_ceil(config.batch_size);
    let schedule = CosineSchedule {
        lr_max: config.lr_max,
        lr_min: config.lr_min,
        total_steps: config.epochs * steps_per_epoch,
    };
    let mut u_opt = SgdNesterov::new(config.momentum);
    let mut l_opt = SgdNesterov::new(config.momentum);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut train_log = Vec::with_capacity(config.epochs);
    let mut step_log = Vec::new();
    let mut step = 0usize;

    for epoch in 0..config.epochs {
        let perms = sample_training_permutations(&grid, fit_set.len(), config.epochs, &mut rng);
        let mut order: Vec<usize> = (0..fit_set.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_u = 0.0;
        let mut epoch_l = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let images: Vec<&Image> = chunk.iter().map(|&i| &fit_set[i].1).collect();
            let lr = schedule.lr(step);

            let (x, batch) =
                build_ubranch_batch(&images, &perms, &grid, config, &channel_mean, &channel_std, &mut rng)?;
            let tape = Tape::new();
            let (out, bind) = ubranch.forward(&tape, &x, true, &mut rng)?;
            let loss = if config.puzzle_only {
                puzzle_loss(out.puzzle, &batch.perms)?
            } else {
                ubranch_loss(
                    out.puzzle,
                    out.tint,
                    out.attention,
                    &batch,
                    &grid,
                    config.lambda_density,
                )?
            };
            let u_val = loss.scalar_value();
            if !u_val.is_finite() {
                return Err(CoreError::Data(format!(
                    "discriminative loss diverged at epoch {epoch} step {step} ({u_val}); \
                     lower lr_max"
                )));
            }
            let grads = tape.backward(loss);
            apply_step(&mut u_opt, &mut ubranch.params, &bind, &grads, lr);
            epoch_u += u_val;
            step_log.push(u_val);

            if let Some(lmodel) = lbranch.as_mut() {
                let color = color_input_batch(&images, config.alpha)?;
                let tape = Tape::new();
                let (out, bind) = lmodel.forward(&tape, &color.x)?;
                let gmm = GmmVars::split(out, k)?;
                let delta = em_mahalanobis(&gmm, &color.target_a, &color.target_b)?;
                let gamma = em_posteriors(
                    &gmm.prior_logits.value(),
                    &gmm.d1.value(),
                    &gmm.d2.value(),
                    &delta.value(),
                );
                let loss = em_q_loss(&gamma, &gmm, delta)?;
                let l_val = loss.scalar_value();
                if !l_val.is_finite() {
                    return Err(CoreError::Data(format!(
                        "colorization loss diverged at epoch {epoch} step {step} ({l_val}); \
                         lower lr_max"
                    )));
                }
                let grads = tape.backward(loss);
                apply_step(&mut l_opt, &mut lmodel.params, &bind, &grads, lr);
                epoch_l += l_val;
            }
            step += 1;
        }
        train_log.push(EpochLog {
            epoch,
            u_loss: epoch_u / steps_per_epoch as f64,
            l_loss: epoch_l / steps_per_epoch as f64,
        });
    }

    let inference_perms = fixed_inference_permutations(&grid, config.n_sp, config.seed)?;
    let mut model = TrainedModel {
        config: config.clone(),
        normal_class: class_name,
        k,
        channel_mean,
        channel_std,
        ubranch,
        lbranch,
        inference_perms,
        calibration: CalibrationTable::new(),
        class_stats: None,
        train_log,
        step_log,
    };

    if config.puzzle_ood == PuzzleOod::Mahalanobis {
        let cal_images: Vec<&Image> = cal_set.iter().map(|(_, img)| img).collect();
        model.class_stats = Some(super::scorer::fit_position_stats(&mut model, &cal_images)?);
    }

    let mut by_task: std::collections::BTreeMap<TaskId, Vec<f64>> = Default::default();
    for (_, img) in &cal_set {
        for score in super::scorer::raw_scores(&mut model, img)? {
            by_task.entry(score.task_id).or_default().push(score.value);
        }
    }
    let mut table = CalibrationTable::new();
    for (task, values) in by_task {
        table.insert(task, values)?;
    }
    model.calibration = table;
    Ok(model)
}

/// Borrowed view of a dataset: class names plus per-class training images.
/// [`LoadedDataset`](super::dataset::LoadedDataset) converts into it; tests
/// can build one directly.
pub struct LoadedData<'a> {
    pub class_names: &'a [String],
    pub train: Vec<&'a [(String, Image)]>,
}

impl<'a> From<&'a super::dataset::LoadedDataset> for LoadedData<'a> {
    fn from(d: &'a super::dataset::LoadedDataset) -> Self {
        LoadedData {
            class_names: &d.class_names,
            train: d.train.iter().map(|v| v.as_slice()).collect(),
        }
    }
}

/// Scoring and training both expect RGB images at the configured side
/// length; grayscale rasters are replicated across channels.
pub(crate) fn prepare_image(img: &Image, size: usize) -> Result<Image> {
    let rgb = if img.channels() == 1 {
        let (h, w) = (img.height(), img.width());
        let mut px = ndarray::Array3::zeros((h, w, 3));
        for r in 0..h {
            for c in 0..w {
                for ch in 0..3 {
                    px[[r, c, ch]] = img.pixels[[r, c, 0]];
                }
            }
        }
        Image::new(px, img.colorspace)?
    } else {
        img.clone()
    };
    if rgb.height() == size && rgb.width() == size {
        Ok(rgb)
    } else {
        resize_bilinear(&rgb, size, size)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subsample_is_deterministic_orderly_and_capped() {
        let items: Vec<usize> = (0..20).collect();
        let a = subsample_limit(&items, 7, 3);
        let b = subsample_limit(&items, 7, 3);
        assert_eq!(a, b);
        assert_eq!(a.len(), 7);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_ne!(a, subsample_limit(&items, 7, 4));
        assert_eq!(subsample_limit(&items, 0, 3), items);
        assert_eq!(subsample_limit(&items, 25, 3), items);
    }

    #[test]
    fn calibration_split_is_a_function_of_ids_not_order() {
        let imgs: Vec<(String, Image)> = (0..10)
            .map(|i| (format!("img-{i}"), Image::solid_rgb(4, 4, [i as f64, 0.0, 0.0])))
            .collect();
        let (cal, fit) = calibration_split(&imgs, 0.2).unwrap();
        assert_eq!(cal.len(), 2);
        assert_eq!(fit.len(), 8);
        let mut shuffled = imgs.clone();
        shuffled.reverse();
        let (cal2, _) = calibration_split(&shuffled, 0.2).unwrap();
        let ids: Vec<&String> = cal.iter().map(|(id, _)| id).collect();
        let ids2: Vec<&String> = cal2.iter().map(|(id, _)| id).collect();
        assert_eq!(ids, ids2);
    }

    #[test]
    fn calibration_split_needs_spare_images() {
        let imgs: Vec<(String, Image)> =
            vec![("only".into(), Image::solid_rgb(4, 4, [1.0, 2.0, 3.0]))];
        assert!(calibration_split(&imgs, 0.5).is_err());
    }

    #[test]
    fn channel_stats_match_hand_computation() {
        let a = Image::solid_rgb(2, 2, [10.0, 0.0, 4.0]);
        let b = Image::solid_rgb(2, 2, [30.0, 0.0, 8.0]);
        let (mean, std) = channel_stats(&[("a".into(), a), ("b".into(), b)]);
        assert_eq!(mean[0], 20.0);
        assert_eq!(std[0], 10.0);
        assert_eq!(mean[1], 0.0);
        assert_eq!(std[1], 1e-6); // floored
        assert_eq!(mean[2], 6.0);
        assert_eq!(std[2], 2.0);
    }

    #[test]
    fn prepare_image_replicates_gray_and_resizes() {
        let gray = Image::new(ndarray::Array3::from_elem((10, 10, 1), 42.0), crate::image::Colorspace::Rgb8).unwrap();
        let out = prepare_image(&gray, 8).unwrap();
        assert_eq!(out.channels(), 3);
        assert_eq!((out.height(), out.width()), (8, 8));
        assert_eq!(out.pixels[[3, 3, 2]], 42.0);
    }
}
