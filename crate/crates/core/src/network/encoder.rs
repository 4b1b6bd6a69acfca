//! Discriminative encoder with three task heads.
//!
//! A shared convolutional backbone pools to a feature vector, and three
//! linear heads read it through a common dropout: piece-position logits
//! `[B, n, n]` (head i scores the cell of piece i), per-piece tint logits
//! `[B, n, c]`, and per-cell attention logits `[B, n]`.

use super::params::{he_normal, Binding, ParamStore};
use crate::autodiff::{batchnorm_eval, batchnorm_train, BatchStats, Tape, Var};
use crate::error::CoreError;
use crate::Result;
use ndarray::{Array1, ArrayD, IxDyn};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

/// Backbone choices: a three-layer stride-2 stack for fast desk-scale runs,
/// and a 16-layer wide residual network (width factor 4) for full runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backbone {
    Tiny,
    WideResnet16x4,
}

#[derive(Debug, Clone, Copy)]
pub struct EncoderConfig {
    pub backbone: Backbone,
    pub n_w: usize,
    pub n_h: usize,
    /// Number of discrete tint rotations.
    pub c: usize,
    pub dropout: f64,
    pub input_channels: usize,
}

impl EncoderConfig {
    pub fn n(&self) -> usize {
        self.n_w * self.n_h
    }
}

/// Head outputs for one forward pass.
pub struct UBranchOutput<'t> {
    /// `[B, n, n]`: row i holds position logits for piece i.
    pub puzzle: Var<'t>,
    /// `[B, n, c]`: row i holds tint-rotation logits for piece i.
    pub tint: Var<'t>,
    /// `[B, n]`: raw (unnormalized) attention logits per cell.
    pub attention: Var<'t>,
}

pub struct UBranchModel {
    pub config: EncoderConfig,
    pub params: ParamStore,
}

// Widths and strides of the three residual groups (two blocks each).
const WRN_WIDTHS: [usize; 3] = [64, 128, 256];
const WRN_STRIDES: [usize; 3] = [1, 2, 2];
const WRN_BLOCKS: usize = 2;
const WRN_STEM: usize = 16;
const TINY_WIDTHS: [usize; 3] = [8, 16, 32];

impl UBranchModel {
    pub fn new(config: EncoderConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let cin = config.input_channels;
        match config.backbone {
            Backbone::Tiny => {
                let mut prev = cin;
                for (i, &w) in TINY_WIDTHS.iter().enumerate() {
                    p.insert(
                        &format!("conv{}.w", i + 1),
                        he_normal(&[w, prev, 3, 3], prev * 9, &mut rng),
                    );
                    p.insert(&format!("conv{}.b", i + 1), ArrayD::zeros(IxDyn(&[w])));
                    prev = w;
                }
            }
            Backbone::WideResnet16x4 => {
                p.insert("stem.w", he_normal(&[WRN_STEM, cin, 3, 3], cin * 9, &mut rng));
                let mut prev = WRN_STEM;
                for (g, (&w, &s)) in WRN_WIDTHS.iter().zip(WRN_STRIDES.iter()).enumerate() {
                    for b in 0..WRN_BLOCKS {
                        let pre = format!("g{g}.b{b}");
                        let stride = if b == 0 { s } else { 1 };
                        insert_bn(&mut p, &format!("{pre}.bn1"), prev);
                        p.insert(
                            &format!("{pre}.conv1.w"),
                            he_normal(&[w, prev, 3, 3], prev * 9, &mut rng),
                        );
                        insert_bn(&mut p, &format!("{pre}.bn2"), w);
                        p.insert(
                            &format!("{pre}.conv2.w"),
                            he_normal(&[w, w, 3, 3], w * 9, &mut rng),
                        );
                        if prev != w || stride != 1 {
                            p.insert(
                                &format!("{pre}.sc.w"),
                                he_normal(&[w, prev, 1, 1], prev, &mut rng),
                            );
                        }
                        prev = w;
                    }
                }
                insert_bn(&mut p, "final_bn", prev);
            }
        }
        let f = feature_dim(config.backbone);
        let n = config.n();
        for (name, out) in [("puzzle", n * n), ("tint", n * config.c), ("attn", n)] {
            p.insert(&format!("{name}.w"), he_normal(&[f, out], f, &mut rng));
            p.insert(&format!("{name}.b"), ArrayD::zeros(IxDyn(&[out])));
        }
        UBranchModel { config, params: p }
    }

    pub fn feature_dim(&self) -> usize {
        feature_dim(self.config.backbone)
    }

    /// Runs the encoder on a `[B, C, H, W]` batch. Training mode enables
    /// dropout and batch-norm batch statistics (updating the stored running
    /// averages); evaluation mode is deterministic.
    pub fn forward<'t>(
        &mut self,
        tape: &'t Tape,
        x: &ArrayD<f64>,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<(UBranchOutput<'t>, Binding<'t>)> {
        let shape = x.shape().to_vec();
        if shape.len() != 4 || shape[1] != self.config.input_channels {
            return Err(CoreError::ShapeMismatch(format!(
                "expected [B, {}, H, W] input, got {shape:?}",
                self.config.input_channels
            )));
        }
        let bsz = shape[0];
        let bind = Binding::bind(tape, &self.params);
        let xv = tape.constant(x.clone());
        let mut stats: Vec<(String, BatchStats)> = Vec::new();

        let feat = match self.config.backbone {
            Backbone::Tiny => {
                let mut h = xv;
                for i in 1..=TINY_WIDTHS.len() {
                    h = h
                        .conv2d(
                            bind.var(&format!("conv{i}.w")),
                            bind.var(&format!("conv{i}.b")),
                            2,
                            1,
                        )
                        .relu();
                }
                h.global_avg_pool()
            }
            Backbone::WideResnet16x4 => {
                let stem_out = zero_bias(tape, WRN_STEM);
                let mut h = xv.conv2d(bind.var("stem.w"), stem_out, 1, 1);
                let mut prev = WRN_STEM;
                for (g, (&w, &s)) in WRN_WIDTHS.iter().zip(WRN_STRIDES.iter()).enumerate() {
                    for b in 0..WRN_BLOCKS {
                        let pre = format!("g{g}.b{b}");
                        let stride = if b == 0 { s } else { 1 };
                        h = self.wrn_block(
                            tape, h, &bind, &pre, prev, w, stride, training, &mut stats,
                        );
                        prev = w;
                    }
                }
                let h = self
                    .bn(h, &bind, "final_bn", training, &mut stats)
                    .relu();
                h.global_avg_pool()
            }
        };

        let feat = feat.dropout(self.config.dropout, training, rng);
        let n = self.config.n();
        let puzzle = linear(feat, &bind, "puzzle").reshape(&[bsz, n, n]);
        let tint = linear(feat, &bind, "tint").reshape(&[bsz, n, self.config.c]);
        let attention = linear(feat, &bind, "attn");

        if training {
            self.apply_running_updates(&stats);
        }
        Ok((
            UBranchOutput {
                puzzle,
                tint,
                attention,
            },
            bind,
        ))
    }

    #[allow(clippy::too_many_arguments)]
    fn wrn_block<'t>(
        &self,
        tape: &'t Tape,
        x: Var<'t>,
        bind: &Binding<'t>,
        pre: &str,
        in_ch: usize,
        out_ch: usize,
        stride: usize,
        training: bool,
        stats: &mut Vec<(String, BatchStats)>,
    ) -> Var<'t> {
        let o1 = self
            .bn(x, bind, &format!("{pre}.bn1"), training, stats)
            .relu();
        let mut y = o1.conv2d(
            bind.var(&format!("{pre}.conv1.w")),
            zero_bias(tape, out_ch),
            stride,
            1,
        );
        let o2 = self
            .bn(y, bind, &format!("{pre}.bn2"), training, stats)
            .relu();
        y = o2.conv2d(
            bind.var(&format!("{pre}.conv2.w")),
            zero_bias(tape, out_ch),
            1,
            1,
        );
        let shortcut = if in_ch != out_ch || stride != 1 {
            // Projection shortcut reads the pre-activated signal.
            o1.conv2d(
                bind.var(&format!("{pre}.sc.w")),
                zero_bias(tape, out_ch),
                stride,
                0,
            )
        } else {
            x
        };
        y.add(shortcut)
    }

    fn bn<'t>(
        &self,
        x: Var<'t>,
        bind: &Binding<'t>,
        prefix: &str,
        training: bool,
        stats: &mut Vec<(String, BatchStats)>,
    ) -> Var<'t> {
        let gamma = bind.var(&format!("{prefix}.gamma"));
        let beta = bind.var(&format!("{prefix}.beta"));
        if training {
            let (y, s) = batchnorm_train(x, gamma, beta, BN_EPS);
            stats.push((prefix.to_string(), s));
            y
        } else {
            let rm = to1(self.params.get(&format!("{prefix}.rm")));
            let rv = to1(self.params.get(&format!("{prefix}.rv")));
            batchnorm_eval(x, gamma, beta, &rm, &rv, BN_EPS)
        }
    }

    fn apply_running_updates(&mut self, stats: &[(String, BatchStats)]) {
        for (prefix, s) in stats {
            for (suffix, batch) in [("rm", &s.mean), ("rv", &s.var)] {
                let name = format!("{prefix}.{suffix}");
                let old = to1(self.params.get(&name));
                // Running stats track the biased batch estimator, matching the
                // normalization used in training mode.
                let new = &old * (1.0 - BN_MOMENTUM) + batch * BN_MOMENTUM;
                self.params.set(&name, new.into_dyn());
            }
        }
    }
}

fn feature_dim(backbone: Backbone) -> usize {
    match backbone {
        Backbone::Tiny => *TINY_WIDTHS.last().unwrap(),
        Backbone::WideResnet16x4 => *WRN_WIDTHS.last().unwrap(),
    }
}

fn insert_bn(p: &mut ParamStore, prefix: &str, ch: usize) {
    p.insert(&format!("{prefix}.gamma"), ArrayD::from_elem(IxDyn(&[ch]), 1.0));
    p.insert(&format!("{prefix}.beta"), ArrayD::zeros(IxDyn(&[ch])));
    p.insert_buffer(&format!("{prefix}.rm"), ArrayD::zeros(IxDyn(&[ch])));
    p.insert_buffer(&format!("{prefix}.rv"), ArrayD::from_elem(IxDyn(&[ch]), 1.0));
}

fn zero_bias<'t>(tape: &'t Tape, ch: usize) -> Var<'t> {
    tape.constant(ArrayD::zeros(IxDyn(&[ch])))
}

fn linear<'t>(x: Var<'t>, bind: &Binding<'t>, name: &str) -> Var<'t> {
    x.matmul(bind.var(&format!("{name}.w")))
        .add(bind.var(&format!("{name}.b")))
}

fn to1(a: &ArrayD<f64>) -> Array1<f64> {
    a.view()
        .into_dimensionality::<ndarray::Ix1>()
        .expect("1-D buffer")
        .to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    fn cfg(backbone: Backbone, n_w: usize, n_h: usize) -> EncoderConfig {
        EncoderConfig {
            backbone,
            n_w,
            n_h,
            c: 4,
            dropout: 0.3,
            input_channels: 3,
        }
    }

    fn input(bsz: usize, h: usize, w: usize) -> ArrayD<f64> {
        let mut x = ArrayD::zeros(IxDyn(&[bsz, 3, h, w]));
        for (i, v) in x.iter_mut().enumerate() {
            *v = ((i % 17) as f64 - 8.0) / 8.0;
        }
        x
    }

    #[test]
    fn tiny_head_shapes_square_grid() {
        let mut m = UBranchModel::new(cfg(Backbone::Tiny, 3, 3), 7);
        let t = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (out, _) = m.forward(&t, &input(2, 30, 30), false, &mut rng).unwrap();
        assert_eq!(out.puzzle.shape(), vec![2, 9, 9]);
        assert_eq!(out.tint.shape(), vec![2, 9, 4]);
        assert_eq!(out.attention.shape(), vec![2, 9]);
    }

    #[test]
    fn tiny_handles_rectangular_grid() {
        // 3 wide x 4 tall: 12 pieces, heads sized accordingly.
        let mut m = UBranchModel::new(cfg(Backbone::Tiny, 3, 4), 7);
        let t = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (out, _) = m.forward(&t, &input(1, 40, 30), false, &mut rng).unwrap();
        assert_eq!(out.puzzle.shape(), vec![1, 12, 12]);
        assert_eq!(out.tint.shape(), vec![1, 12, 4]);
        assert_eq!(out.attention.shape(), vec![1, 12]);
    }

    #[test]
    fn wide_resnet_shapes_and_param_count() {
        let mut m = UBranchModel::new(cfg(Backbone::WideResnet16x4, 3, 3), 3);
        // 12 block convs + stem + 3 projections, plus heads and bn params.
        assert!(m.params.num_scalars() > 2_500_000);
        let t = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (out, _) = m.forward(&t, &input(1, 16, 16), false, &mut rng).unwrap();
        assert_eq!(out.puzzle.shape(), vec![1, 9, 9]);
    }

    #[test]
    fn same_seed_same_params_and_eval_outputs() {
        let mut a = UBranchModel::new(cfg(Backbone::Tiny, 2, 2), 11);
        let mut b = UBranchModel::new(cfg(Backbone::Tiny, 2, 2), 11);
        for name in a.params.names().to_vec() {
            assert_eq!(a.params.get(&name), b.params.get(&name), "{name}");
        }
        let x = input(2, 16, 16);
        let (ta, tb) = (Tape::new(), Tape::new());
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let mut r2 = ChaCha8Rng::seed_from_u64(99);
        // Eval mode ignores the rng entirely.
        let (oa, _) = a.forward(&ta, &x, false, &mut r1).unwrap();
        let (ob, _) = b.forward(&tb, &x, false, &mut r2).unwrap();
        assert_eq!(*oa.puzzle.value(), *ob.puzzle.value());
        assert_eq!(*oa.tint.value(), *ob.tint.value());
        assert_eq!(*oa.attention.value(), *ob.attention.value());
    }

    #[test]
    fn different_seeds_differ() {
        let a = UBranchModel::new(cfg(Backbone::Tiny, 2, 2), 1);
        let b = UBranchModel::new(cfg(Backbone::Tiny, 2, 2), 2);
        assert_ne!(a.params.get("conv1.w"), b.params.get("conv1.w"));
    }

    #[test]
    fn training_forward_updates_running_stats() {
        let mut m = UBranchModel::new(cfg(Backbone::WideResnet16x4, 2, 2), 3);
        let before = m.params.get("g0.b0.bn1.rm").clone();
        let t = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        m.forward(&t, &input(2, 8, 8), true, &mut rng).unwrap();
        assert_ne!(m.params.get("g0.b0.bn1.rm"), &before);
    }

    #[test]
    fn gradients_reach_all_trainable_params() {
        let mut m = UBranchModel::new(cfg(Backbone::Tiny, 2, 2), 13);
        let t = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (out, bind) = m.forward(&t, &input(2, 12, 12), false, &mut rng).unwrap();
        let loss = out
            .puzzle
            .sum_all()
            .add(out.tint.sum_all())
            .add(out.attention.mul(out.attention).sum_all());
        let grads = t.backward(loss);
        for name in bind.trainable_names() {
            let g = grads.get(bind.var(name)).unwrap_or_else(|| {
                panic!("missing gradient for {name}");
            });
            assert_eq!(g.shape(), m.params.get(name).shape(), "{name}");
        }
    }

    #[test]
    fn wrong_channel_count_rejected() {
        let mut m = UBranchModel::new(cfg(Backbone::Tiny, 2, 2), 13);
        let t = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = ArrayD::zeros(IxDyn(&[1, 1, 8, 8]));
        assert!(m.forward(&t, &x, false, &mut rng).is_err());
    }
}
