//! Image-to-tensor plumbing shared by the trainer and the scorer.

use crate::image::{make_partial_color_input, Image};
use crate::network::stack_partial_color_inputs;
use crate::Result;
use ndarray::{Array2, Array3, ArrayD, Axis, IxDyn};

/// The luminance plane is divided by this before entering the decoder.
pub(crate) const LUMA_SCALE: f64 = 100.0;

/// Chroma planes and mixture targets are divided by this; predicting in
/// roughly unit range keeps early optimizer steps well-scaled. The NLL this
/// induces differs from the raw-chroma NLL by a constant, which percentile
/// calibration ignores.
pub(crate) const CHROMA_SCALE: f64 = 110.0;

/// `[3, H, W]` tensor with per-channel standardization.
pub(crate) fn normalized_tensor(img: &Image, mean: &[f64; 3], std: &[f64; 3]) -> Array3<f64> {
    let (h, w) = (img.height(), img.width());
    let mut t = Array3::zeros((3, h, w));
    for r in 0..h {
        for c in 0..w {
            for ch in 0..3 {
                t[[ch, r, c]] = (img.pixels[[r, c, ch]] - mean[ch]) / std[ch];
            }
        }
    }
    t
}

/// Stack `[C, H, W]` tensors into `[B, C, H, W]`.
pub(crate) fn stack_images(tensors: &[Array3<f64>]) -> ArrayD<f64> {
    let (c, h, w) = tensors[0].dim();
    let mut out = ArrayD::zeros(IxDyn(&[tensors.len(), c, h, w]));
    for (b, t) in tensors.iter().enumerate() {
        out.index_axis_mut(Axis(0), b).assign(t);
    }
    out
}

/// Colorization inputs for a batch: scaled `[B, 4, H, W]` planes, scaled
/// `[B, H, W]` chroma targets, and each image's border mask.
pub(crate) struct ColorBatch {
    pub x: ArrayD<f64>,
    pub target_a: ArrayD<f64>,
    pub target_b: ArrayD<f64>,
    pub masks: Vec<Array2<f64>>,
}

pub(crate) fn color_input_batch(images: &[&Image], alpha: usize) -> Result<ColorBatch> {
    let inputs = images
        .iter()
        .map(|img| make_partial_color_input(img, alpha))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&_> = inputs.iter().collect();
    let mut x = stack_partial_color_inputs(&refs)?;
    for (plane, scale) in [(0, LUMA_SCALE), (1, CHROMA_SCALE), (2, CHROMA_SCALE)] {
        x.index_axis_mut(Axis(1), plane).mapv_inplace(|v| v / scale);
    }
    let (h, w) = (images[0].height(), images[0].width());
    let mut target_a = ArrayD::zeros(IxDyn(&[images.len(), h, w]));
    let mut target_b = ArrayD::zeros(IxDyn(&[images.len(), h, w]));
    let mut masks = Vec::with_capacity(inputs.len());
    for (b, input) in inputs.into_iter().enumerate() {
        target_a
            .index_axis_mut(Axis(0), b)
            .assign(&input.target_a.mapv(|v| v / CHROMA_SCALE));
        target_b
            .index_axis_mut(Axis(0), b)
            .assign(&input.target_b.mapv(|v| v / CHROMA_SCALE));
        masks.push(input.mask);
    }
    Ok(ColorBatch {
        x,
        target_a,
        target_b,
        masks,
    })
}
