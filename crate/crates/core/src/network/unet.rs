//! Generative encoder-decoder predicting per-pixel chroma densities.
//!
//! A depth-2 UNet maps the partially colored input (luminance, masked A,
//! masked B, mask) to either 6K Gaussian-mixture parameters per pixel or
//! 2K color-bin logits per pixel. Inputs whose sides are not multiples of
//! four are reflect-padded, run through the network, and cropped back.

use super::params::{he_normal, Binding, ParamStore};
use crate::autodiff::{Tape, Var};
use crate::error::CoreError;
use crate::Result;
use crate::image::PartialColorInput;
use ndarray::{Array3, ArrayD, IxDyn};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Output head of the generative branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColorHead {
    /// `6k` channels per pixel: prior logits, means, covariance parameters
    /// for a k-component bivariate mixture over (A, B).
    Gmm { k: usize },
    /// `2k` channels per pixel: k bin logits for A and k for B.
    Bins { k: usize },
}

impl ColorHead {
    pub fn out_channels(&self) -> usize {
        match *self {
            ColorHead::Gmm { k } => 6 * k,
            ColorHead::Bins { k } => 2 * k,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LBranchConfig {
    pub head: ColorHead,
    /// Channel width of the first encoder level; deeper levels double it.
    pub base_width: usize,
}

impl Default for LBranchConfig {
    fn default() -> Self {
        LBranchConfig {
            head: ColorHead::Gmm { k: 1 },
            base_width: 16,
        }
    }
}

/// Number of input planes: luminance, masked A, masked B, mask.
pub const LBRANCH_IN_CHANNELS: usize = 4;

pub struct LBranchModel {
    pub config: LBranchConfig,
    pub params: ParamStore,
}

impl LBranchModel {
    pub fn new(config: LBranchConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let w = config.base_width;
        let out_ch = config.head.out_channels();
        let specs: [(&str, usize, usize, usize); 6] = [
            ("e1", LBRANCH_IN_CHANNELS, w, 3),
            ("e2", w, 2 * w, 3),
            ("mid", 2 * w, 4 * w, 3),
            ("u2", 4 * w + 2 * w, 2 * w, 3),
            ("u1", 2 * w + w, w, 3),
            ("out", w, out_ch, 1),
        ];
        for (name, cin, cout, k) in specs {
            p.insert(
                &format!("{name}.w"),
                he_normal(&[cout, cin, k, k], cin * k * k, &mut rng),
            );
            p.insert(&format!("{name}.b"), ArrayD::zeros(IxDyn(&[cout])));
        }
        LBranchModel { config, params: p }
    }

    /// Runs the decoder on a `[B, 4, H, W]` batch; the output is
    /// `[B, out_channels, H, W]`. Deterministic (no dropout, no batch norm).
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        x: &ArrayD<f64>,
    ) -> Result<(Var<'t>, Binding<'t>)> {
        let shape = x.shape().to_vec();
        if shape.len() != 4 || shape[1] != LBRANCH_IN_CHANNELS {
            return Err(CoreError::ShapeMismatch(format!(
                "expected [B, {LBRANCH_IN_CHANNELS}, H, W] input, got {shape:?}"
            )));
        }
        let (h, w) = (shape[2], shape[3]);
        if h < 4 || w < 4 {
            return Err(CoreError::ImageTooSmall {
                height: h,
                width: w,
                n_h: 1,
                n_w: 1,
                margin: 0.0,
            });
        }
        let bind = Binding::bind(tape, &self.params);
        let mut v = tape.constant(x.clone());
        // Pad each side up to the next multiple of 4 (two pooling levels).
        let (pad_h, pad_w) = (h.next_multiple_of(4) - h, w.next_multiple_of(4) - w);
        let (top, left) = (pad_h / 2, pad_w / 2);
        if pad_h > 0 || pad_w > 0 {
            v = v.reflect_pad2d(top, pad_h - top, left, pad_w - left);
        }

        let conv = |x: Var<'t>, name: &str, pad: usize| -> Var<'t> {
            x.conv2d(
                bind.var(&format!("{name}.w")),
                bind.var(&format!("{name}.b")),
                1,
                pad,
            )
        };
        let e1 = conv(v, "e1", 1).relu();
        let e2 = conv(e1.maxpool2(), "e2", 1).relu();
        let mid = conv(e2.maxpool2(), "mid", 1).relu();
        let u2 = conv(tape.concat(1, &[mid.upsample2(), e2]), "u2", 1).relu();
        let u1 = conv(tape.concat(1, &[u2.upsample2(), e1]), "u1", 1).relu();
        let mut out = conv(u1, "out", 0);
        if pad_h > 0 || pad_w > 0 {
            out = out.crop2d(top, left, h, w);
        }
        Ok((out, bind))
    }
}

/// Stacks partial-color inputs into the `[B, 4, H, W]` plane order the
/// decoder expects: luminance, masked A, masked B, mask.
pub fn stack_partial_color_inputs(inputs: &[&PartialColorInput]) -> Result<ArrayD<f64>> {
    if inputs.is_empty() {
        return Err(CoreError::EmptyInput("no partial-color inputs".into()));
    }
    let (h, w) = inputs[0].luminance.dim();
    let mut x = ArrayD::zeros(IxDyn(&[inputs.len(), LBRANCH_IN_CHANNELS, h, w]));
    for (b, inp) in inputs.iter().enumerate() {
        if inp.luminance.dim() != (h, w) {
            return Err(CoreError::ShapeMismatch(format!(
                "expected {h}x{w} planes, got {:?}",
                inp.luminance.dim()
            )));
        }
        for (c, plane) in [&inp.luminance, &inp.masked_a, &inp.masked_b, &inp.mask]
            .iter()
            .enumerate()
        {
            for i in 0..h {
                for j in 0..w {
                    x[[b, c, i, j]] = plane[[i, j]];
                }
            }
        }
    }
    Ok(x)
}

/// Per-pixel mixture parameters decoded from the `6K` output channels of one
/// image: channels `[0,K)` prior logits, `[K,2K)` mean A, `[2K,3K)` mean B,
/// `[3K,4K)` d1, `[4K,5K)` d2, `[5K,6K)` off-diagonal l. Priors are stored
/// softmax-normalized.
#[derive(Debug, Clone)]
pub struct GmmParamMap {
    pub k: usize,
    /// `[K, H, W]`, sums to 1 over the first axis at every pixel.
    pub priors: Array3<f64>,
    pub mean_a: Array3<f64>,
    pub mean_b: Array3<f64>,
    pub d1: Array3<f64>,
    pub d2: Array3<f64>,
    pub l: Array3<f64>,
}

impl GmmParamMap {
    /// Decodes one image's raw channel map `[6K, H, W]`.
    pub fn from_channels(out: &ArrayD<f64>, k: usize) -> Result<GmmParamMap> {
        let shape = out.shape();
        if shape.len() != 3 || shape[0] != 6 * k {
            return Err(CoreError::ShapeMismatch(format!(
                "expected [{}, H, W] channel map, got {shape:?}",
                6 * k
            )));
        }
        let (h, w) = (shape[1], shape[2]);
        let slab = |g: usize| -> Array3<f64> {
            let mut a = Array3::zeros((k, h, w));
            for kk in 0..k {
                for i in 0..h {
                    for j in 0..w {
                        a[[kk, i, j]] = out[[g * k + kk, i, j]];
                    }
                }
            }
            a
        };
        let logits = slab(0);
        let mut priors = Array3::zeros((k, h, w));
        for i in 0..h {
            for j in 0..w {
                let m = (0..k)
                    .map(|kk| logits[[kk, i, j]])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for kk in 0..k {
                    let e = (logits[[kk, i, j]] - m).exp();
                    priors[[kk, i, j]] = e;
                    z += e;
                }
                for kk in 0..k {
                    priors[[kk, i, j]] /= z;
                }
            }
        }
        Ok(GmmParamMap {
            k,
            priors,
            mean_a: slab(1),
            mean_b: slab(2),
            d1: slab(3),
            d2: slab(4),
            l: slab(5),
        })
    }

    pub fn height(&self) -> usize {
        self.priors.dim().1
    }

    pub fn width(&self) -> usize {
        self.priors.dim().2
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{make_partial_color_input, Image};
    use approx::assert_abs_diff_eq;

    fn batch(bsz: usize, h: usize, w: usize) -> ArrayD<f64> {
        let mut x = ArrayD::zeros(IxDyn(&[bsz, LBRANCH_IN_CHANNELS, h, w]));
        for (i, v) in x.iter_mut().enumerate() {
            *v = ((i % 13) as f64) / 13.0;
        }
        x
    }

    #[test]
    fn gmm_head_output_shape() {
        let m = LBranchModel::new(
            LBranchConfig {
                head: ColorHead::Gmm { k: 3 },
                base_width: 4,
            },
            9,
        );
        let t = Tape::new_no_grad();
        let (out, _) = m.forward(&t, &batch(1, 32, 32)).unwrap();
        assert_eq!(out.shape(), vec![1, 18, 32, 32]);
    }

    #[test]
    fn bin_head_output_shape() {
        let m = LBranchModel::new(
            LBranchConfig {
                head: ColorHead::Bins { k: 10 },
                base_width: 4,
            },
            9,
        );
        let t = Tape::new_no_grad();
        let (out, _) = m.forward(&t, &batch(2, 16, 16)).unwrap();
        assert_eq!(out.shape(), vec![2, 20, 16, 16]);
    }

    #[test]
    fn odd_sizes_pad_and_crop_back() {
        let m = LBranchModel::new(
            LBranchConfig {
                head: ColorHead::Gmm { k: 1 },
                base_width: 4,
            },
            9,
        );
        let t = Tape::new_no_grad();
        let (out, _) = m.forward(&t, &batch(1, 15, 13)).unwrap();
        assert_eq!(out.shape(), vec![1, 6, 15, 13]);
    }

    #[test]
    fn forward_is_deterministic() {
        let m = LBranchModel::new(LBranchConfig::default(), 21);
        let x = batch(1, 12, 12);
        let (t1, t2) = (Tape::new_no_grad(), Tape::new_no_grad());
        let (a, _) = m.forward(&t1, &x).unwrap();
        let (b, _) = m.forward(&t2, &x).unwrap();
        assert_eq!(*a.value(), *b.value());
    }

    #[test]
    fn gradients_reach_all_params() {
        let m = LBranchModel::new(
            LBranchConfig {
                head: ColorHead::Gmm { k: 1 },
                base_width: 2,
            },
            4,
        );
        let t = Tape::new();
        let (out, bind) = m.forward(&t, &batch(1, 8, 8)).unwrap();
        let loss = out.mul(out).sum_all();
        let grads = t.backward(loss);
        for name in bind.trainable_names() {
            assert!(grads.get(bind.var(name)).is_some(), "missing grad {name}");
        }
    }

    #[test]
    fn stacking_orders_planes() {
        let img = Image::solid_rgb(8, 8, [120.0, 30.0, 200.0]);
        let inp = make_partial_color_input(&img, 2).unwrap();
        let x = stack_partial_color_inputs(&[&inp]).unwrap();
        assert_eq!(x.shape(), &[1, 4, 8, 8]);
        assert_abs_diff_eq!(x[[0, 0, 4, 4]], inp.luminance[[4, 4]]);
        assert_abs_diff_eq!(x[[0, 1, 0, 0]], inp.masked_a[[0, 0]]);
        assert_abs_diff_eq!(x[[0, 2, 0, 0]], inp.masked_b[[0, 0]]);
        assert_abs_diff_eq!(x[[0, 3, 0, 0]], 1.0);
        assert_abs_diff_eq!(x[[0, 3, 4, 4]], 0.0);
    }

    #[test]
    fn param_map_decodes_slabs_and_normalizes_priors() {
        let k = 2;
        let mut raw = ArrayD::zeros(IxDyn(&[6 * k, 2, 2]));
        // prior logits ln 3 vs ln 1 -> priors 0.75 / 0.25
        raw[[0, 0, 0]] = 3.0f64.ln();
        raw[[1, 0, 0]] = 0.0;
        raw[[2, 1, 1]] = 42.0; // mean A of component 0
        raw[[5, 1, 1]] = -7.0; // mean B of component 1
        raw[[7, 0, 1]] = 0.5; // d1 of component 1
        raw[[11, 1, 0]] = 1.5; // l of component 1
        let m = GmmParamMap::from_channels(&raw, k).unwrap();
        assert_abs_diff_eq!(m.priors[[0, 0, 0]], 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(m.priors[[1, 0, 0]], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(m.mean_a[[0, 1, 1]], 42.0);
        assert_abs_diff_eq!(m.mean_b[[1, 1, 1]], -7.0);
        assert_abs_diff_eq!(m.d1[[1, 0, 1]], 0.5);
        assert_abs_diff_eq!(m.l[[1, 1, 0]], 1.5);
        for i in 0..2 {
            for j in 0..2 {
                let s: f64 = (0..k).map(|kk| m.priors[[kk, i, j]]).sum();
                assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn tiny_inputs_rejected() {
        let m = LBranchModel::new(LBranchConfig::default(), 1);
        let t = Tape::new_no_grad();
        assert!(m.forward(&t, &batch(1, 3, 3)).is_err());
    }
}
