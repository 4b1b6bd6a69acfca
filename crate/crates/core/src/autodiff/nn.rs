//! Network layers: convolution, pooling, padding, normalization, dropout.
//!
//! Tensors are NCHW. The convolution batch loop goes through the
//! data-parallel helpers; per-item outputs are independent and the weight
//! gradient is reduced in fixed batch order, so results are bit-identical
//! with parallelism on or off.

use super::Var;
use crate::par;
use ndarray::{Array1, Array2, ArrayD, Ix4, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

fn dims4(shape: &[usize]) -> (usize, usize, usize, usize) {
    assert_eq!(shape.len(), 4, "expected NCHW tensor, got {shape:?}");
    (shape[0], shape[1], shape[2], shape[3])
}

/// Zero-pad the spatial dims of one batch item into a contiguous buffer.
fn pad_item(x: &[f64], c: usize, h: usize, w: usize, p: usize) -> Vec<f64> {
    let (hp, wp) = (h + 2 * p, w + 2 * p);
    let mut out = vec![0.0; c * hp * wp];
    for ci in 0..c {
        for y in 0..h {
            let src = (ci * h + y) * w;
            let dst = (ci * hp + y + p) * wp + p;
            out[dst..dst + w].copy_from_slice(&x[src..src + w]);
        }
    }
    out
}

fn im2col(
    xp: &[f64],
    c: usize,
    hp: usize,
    wp: usize,
    kh: usize,
    kw: usize,
    s: usize,
    oh: usize,
    ow: usize,
) -> Array2<f64> {
    let mut cols = Array2::zeros((c * kh * kw, oh * ow));
    let cs = cols.as_slice_mut().unwrap();
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                let base = row * oh * ow;
                for oy in 0..oh {
                    let src = (ci * hp + oy * s + ky) * wp + kx;
                    let dst = base + oy * ow;
                    for ox in 0..ow {
                        cs[dst + ox] = xp[src + ox * s];
                    }
                }
            }
        }
    }
    cols
}

fn col2im(
    gcols: &Array2<f64>,
    c: usize,
    hp: usize,
    wp: usize,
    kh: usize,
    kw: usize,
    s: usize,
    oh: usize,
    ow: usize,
) -> Vec<f64> {
    let mut gxp = vec![0.0; c * hp * wp];
    let gs = gcols.as_slice().unwrap();
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                let base = row * oh * ow;
                for oy in 0..oh {
                    let dst = (ci * hp + oy * s + ky) * wp + kx;
                    let src = base + oy * ow;
                    for ox in 0..ow {
                        gxp[dst + ox * s] += gs[src + ox];
                    }
                }
            }
        }
    }
    gxp
}

impl<'t> Var<'t> {
    /// 2-D convolution: input `[B, Cin, H, W]`, weight `[Cout, Cin, kh, kw]`,
    /// bias `[Cout]`, zero padding.
    pub fn conv2d(self, weight: Var<'t>, bias: Var<'t>, stride: usize, pad: usize) -> Var<'t> {
        let xv = self.value();
        let wv = weight.value();
        let bv = bias.value();
        let (bsz, cin, h, w) = dims4(xv.shape());
        let (cout, wcin, kh, kw) = dims4(wv.shape());
        assert_eq!(cin, wcin, "conv2d channel mismatch");
        assert_eq!(bv.len(), cout, "conv2d bias length mismatch");
        let (hp, wp) = (h + 2 * pad, w + 2 * pad);
        assert!(hp >= kh && wp >= kw, "conv2d kernel larger than input");
        let oh = (hp - kh) / stride + 1;
        let ow = (wp - kw) / stride + 1;

        let w2 = wv
            .view()
            .into_shape_with_order((cout, cin * kh * kw))
            .unwrap()
            .to_owned();
        let xv_std = xv.as_standard_layout();
        let xs = xv_std.as_slice().unwrap();
        let parallel = self.tape().parallel();
        let per_item: Vec<(Array2<f64>, Array2<f64>)> = par::map_indexed_with(bsz, parallel, |b| {
            let xp = pad_item(&xs[b * cin * h * w..(b + 1) * cin * h * w], cin, h, w, pad);
            let cols = im2col(&xp, cin, hp, wp, kh, kw, stride, oh, ow);
            let out = w2.dot(&cols);
            (cols, out)
        });

        let mut value = ArrayD::zeros(IxDyn(&[bsz, cout, oh, ow]));
        {
            let vs = value.as_slice_mut().unwrap();
            let bs = bv.as_slice().unwrap();
            for (b, (_, out)) in per_item.iter().enumerate() {
                let os = out.as_slice().unwrap();
                for co in 0..cout {
                    let dst = (b * cout + co) * oh * ow;
                    let src = co * oh * ow;
                    for i in 0..oh * ow {
                        vs[dst + i] = os[src + i] + bs[co];
                    }
                }
            }
        }

        let cols_all: Arc<Vec<Array2<f64>>> =
            Arc::new(per_item.into_iter().map(|(c, _)| c).collect());
        let (ix, iw, ib) = (self.id(), weight.id(), bias.id());
        self.tape().push_op(value, move |g, sink| {
            let gs = g.as_slice().unwrap();
            let item_grads: Vec<(Array2<f64>, Vec<f64>, Vec<f64>)> =
                par::map_indexed_with(bsz, parallel, |b| {
                    let gout = Array2::from_shape_vec(
                        (cout, oh * ow),
                        gs[b * cout * oh * ow..(b + 1) * cout * oh * ow].to_vec(),
                    )
                    .unwrap();
                    let gw_b = gout.dot(&cols_all[b].t());
                    let gcols = w2.t().dot(&gout);
                    let gxp = col2im(&gcols, cin, hp, wp, kh, kw, stride, oh, ow);
                    // Strip padding back to the input window.
                    let mut gx_b = vec![0.0; cin * h * w];
                    for ci in 0..cin {
                        for y in 0..h {
                            let src = (ci * hp + y + pad) * wp + pad;
                            let dst = (ci * h + y) * w;
                            gx_b[dst..dst + w].copy_from_slice(&gxp[src..src + w]);
                        }
                    }
                    let gb_b: Vec<f64> = (0..cout)
                        .map(|co| gout.row(co).sum())
                        .collect();
                    (gw_b, gx_b, gb_b)
                });

            let mut gw2 = Array2::<f64>::zeros((cout, cin * kh * kw));
            let mut gb = vec![0.0; cout];
            let mut gx = ArrayD::zeros(IxDyn(&[bsz, cin, h, w]));
            let gxs = gx.as_slice_mut().unwrap();
            for (b, (gw_b, gx_b, gb_b)) in item_grads.iter().enumerate() {
                gw2 += gw_b;
                gxs[b * cin * h * w..(b + 1) * cin * h * w].copy_from_slice(gx_b);
                for co in 0..cout {
                    gb[co] += gb_b[co];
                }
            }
            sink.add(ix, gx);
            sink.add(
                iw,
                gw2.into_shape_with_order(IxDyn(&[cout, cin, kh, kw])).unwrap(),
            );
            sink.add(ib, Array1::from_vec(gb).into_dyn());
        })
    }

    /// 2x2 max pooling with stride 2; spatial dims must be even.
    pub fn maxpool2(self) -> Var<'t> {
        let xv = self.value();
        let (bsz, c, h, w) = dims4(xv.shape());
        assert!(h % 2 == 0 && w % 2 == 0, "maxpool2 needs even dims");
        let (oh, ow) = (h / 2, w / 2);
        let x4 = xv.view().into_dimensionality::<Ix4>().unwrap();
        let mut value = ArrayD::zeros(IxDyn(&[bsz, c, oh, ow]));
        let mut which = vec![0u8; bsz * c * oh * ow];
        {
            let v4 = value.view_mut().into_dimensionality::<Ix4>().unwrap();
            let mut v4 = v4;
            let mut idx = 0;
            for b in 0..bsz {
                for ci in 0..c {
                    for i in 0..oh {
                        for j in 0..ow {
                            let mut best = f64::NEG_INFINITY;
                            let mut arg = 0u8;
                            for dy in 0..2 {
                                for dx in 0..2 {
                                    let v = x4[[b, ci, 2 * i + dy, 2 * j + dx]];
                                    if v > best {
                                        best = v;
                                        arg = (dy * 2 + dx) as u8;
                                    }
                                }
                            }
                            v4[[b, ci, i, j]] = best;
                            which[idx] = arg;
                            idx += 1;
                        }
                    }
                }
            }
        }
        let id = self.id();
        self.tape().push_op(value, move |g, sink| {
            let mut gx = ArrayD::zeros(IxDyn(&[bsz, c, h, w]));
            {
                let mut gx4 = gx.view_mut().into_dimensionality::<Ix4>().unwrap();
                let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                let mut idx = 0;
                for b in 0..bsz {
                    for ci in 0..c {
                        for i in 0..oh {
                            for j in 0..ow {
                                let arg = which[idx] as usize;
                                idx += 1;
                                gx4[[b, ci, 2 * i + arg / 2, 2 * j + arg % 2]] += g4[[b, ci, i, j]];
                            }
                        }
                    }
                }
            }
            sink.add(id, gx);
        })
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample2(self) -> Var<'t> {
        let xv = self.value();
        let (bsz, c, h, w) = dims4(xv.shape());
        let x4 = xv.view().into_dimensionality::<Ix4>().unwrap();
        let mut value = ArrayD::zeros(IxDyn(&[bsz, c, 2 * h, 2 * w]));
        {
            let mut v4 = value.view_mut().into_dimensionality::<Ix4>().unwrap();
            for b in 0..bsz {
                for ci in 0..c {
                    for i in 0..2 * h {
                        for j in 0..2 * w {
                            v4[[b, ci, i, j]] = x4[[b, ci, i / 2, j / 2]];
                        }
                    }
                }
            }
        }
        let id = self.id();
        self.tape().push_op(value, move |g, sink| {
            let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
            let mut gx = ArrayD::zeros(IxDyn(&[bsz, c, h, w]));
            {
                let mut gx4 = gx.view_mut().into_dimensionality::<Ix4>().unwrap();
                for b in 0..bsz {
                    for ci in 0..c {
                        for i in 0..2 * h {
                            for j in 0..2 * w {
                                gx4[[b, ci, i / 2, j / 2]] += g4[[b, ci, i, j]];
                            }
                        }
                    }
                }
            }
            sink.add(id, gx);
        })
    }

    /// Reflect-pad the spatial dims (mirror without repeating the edge).
    pub fn reflect_pad2d(self, top: usize, bottom: usize, left: usize, right: usize) -> Var<'t> {
        let xv = self.value();
        let (bsz, c, h, w) = dims4(xv.shape());
        assert!(top < h && bottom < h && left < w && right < w, "reflect pad too wide");
        let reflect = |i: isize, n: usize| -> usize {
            let n = n as isize;
            let m = if i < 0 { -i } else if i >= n { 2 * n - 2 - i } else { i };
            m as usize
        };
        let (nh, nw) = (h + top + bottom, w + left + right);
        let x4 = xv.view().into_dimensionality::<Ix4>().unwrap();
        let mut value = ArrayD::zeros(IxDyn(&[bsz, c, nh, nw]));
        {
            let mut v4 = value.view_mut().into_dimensionality::<Ix4>().unwrap();
            for b in 0..bsz {
                for ci in 0..c {
                    for i in 0..nh {
                        let sy = reflect(i as isize - top as isize, h);
                        for j in 0..nw {
                            let sx = reflect(j as isize - left as isize, w);
                            v4[[b, ci, i, j]] = x4[[b, ci, sy, sx]];
                        }
                    }
                }
            }
        }
        let id = self.id();
        self.tape().push_op(value, move |g, sink| {
            let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
            let mut gx = ArrayD::zeros(IxDyn(&[bsz, c, h, w]));
            {
                let mut gx4 = gx.view_mut().into_dimensionality::<Ix4>().unwrap();
                for b in 0..bsz {
                    for ci in 0..c {
                        for i in 0..nh {
                            let sy = reflect(i as isize - top as isize, h);
                            for j in 0..nw {
                                let sx = reflect(j as isize - left as isize, w);
                                gx4[[b, ci, sy, sx]] += g4[[b, ci, i, j]];
                            }
                        }
                    }
                }
            }
            sink.add(id, gx);
        })
    }

    /// Crop the spatial dims to `h x w` starting at `(top, left)`.
    pub fn crop2d(self, top: usize, left: usize, h: usize, w: usize) -> Var<'t> {
        self.slice_axis(2, top, top + h).slice_axis(3, left, left + w)
    }

    /// Mean over the spatial dims: `[B, C, H, W] -> [B, C]`.
    pub fn global_avg_pool(self) -> Var<'t> {
        let shape = self.shape();
        let (bsz, c, h, w) = dims4(&shape);
        self.sum_axis_keep(3)
            .sum_axis_keep(2)
            .reshape(&[bsz, c])
            .mul_scalar(1.0 / (h * w) as f64)
    }

    /// Inverted dropout: keeps with probability `1-p` and rescales; identity
    /// when not training.
    pub fn dropout(self, p: f64, training: bool, rng: &mut ChaCha8Rng) -> Var<'t> {
        if !training || p <= 0.0 {
            return self;
        }
        assert!(p < 1.0, "dropout rate must be < 1");
        let keep = 1.0 - p;
        let mask: ArrayD<f64> = ArrayD::from_shape_fn(self.value().raw_dim(), |_| {
            if rng.gen::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        let value = &*self.value() * &mask;
        let id = self.id();
        self.tape().push_op(value, move |g, sink| sink.add(id, g * &mask))
    }
}

/// Per-channel batch statistics returned by [`batchnorm_train`].
pub struct BatchStats {
    pub mean: Array1<f64>,
    /// Biased (1/m) variance over batch and spatial dims.
    pub var: Array1<f64>,
}

/// Batch normalization in training mode over `[B, C, H, W]`.
///
/// Returns the normalized output and the batch statistics so the caller can
/// maintain running averages for evaluation mode.
pub fn batchnorm_train<'t>(
    x: Var<'t>,
    gamma: Var<'t>,
    beta: Var<'t>,
    eps: f64,
) -> (Var<'t>, BatchStats) {
    let xv = x.value();
    let gv = gamma.value();
    let bv = beta.value();
    let (bsz, c, h, w) = dims4(xv.shape());
    let m = (bsz * h * w) as f64;
    let x4 = xv.view().into_dimensionality::<Ix4>().unwrap();
    let mut mean = Array1::zeros(c);
    let mut var = Array1::zeros(c);
    for ci in 0..c {
        let mut s = 0.0;
        for b in 0..bsz {
            for i in 0..h {
                for j in 0..w {
                    s += x4[[b, ci, i, j]];
                }
            }
        }
        mean[ci] = s / m;
        let mut v = 0.0;
        for b in 0..bsz {
            for i in 0..h {
                for j in 0..w {
                    let d = x4[[b, ci, i, j]] - mean[ci];
                    v += d * d;
                }
            }
        }
        var[ci] = v / m;
    }
    let invstd: Array1<f64> = var.mapv(|v| 1.0 / (v + eps).sqrt());
    let mut xhat = ArrayD::zeros(xv.raw_dim());
    let mut value = ArrayD::zeros(xv.raw_dim());
    {
        let mut xh4 = xhat.view_mut().into_dimensionality::<Ix4>().unwrap();
        let mut v4 = value.view_mut().into_dimensionality::<Ix4>().unwrap();
        for b in 0..bsz {
            for ci in 0..c {
                for i in 0..h {
                    for j in 0..w {
                        let xh = (x4[[b, ci, i, j]] - mean[ci]) * invstd[ci];
                        xh4[[b, ci, i, j]] = xh;
                        v4[[b, ci, i, j]] = gv[[ci]] * xh + bv[[ci]];
                    }
                }
            }
        }
    }
    let stats = BatchStats {
        mean: mean.clone(),
        var: var.clone(),
    };
    let (ix, ig, ib) = (x.id(), gamma.id(), beta.id());
    let xhat = Arc::new(xhat);
    let out = x.tape().push_op(value, move |g, sink| {
        let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
        let xh4 = xhat.view().into_dimensionality::<Ix4>().unwrap();
        let mut ggamma = Array1::zeros(c);
        let mut gbeta = Array1::zeros(c);
        for ci in 0..c {
            let mut sg = 0.0;
            let mut sgx = 0.0;
            for b in 0..bsz {
                for i in 0..h {
                    for j in 0..w {
                        sg += g4[[b, ci, i, j]];
                        sgx += g4[[b, ci, i, j]] * xh4[[b, ci, i, j]];
                    }
                }
            }
            gbeta[ci] = sg;
            ggamma[ci] = sgx;
        }
        let mut gx = ArrayD::zeros(g.raw_dim());
        {
            let mut gx4 = gx.view_mut().into_dimensionality::<Ix4>().unwrap();
            for ci in 0..c {
                let k = gv[[ci]] * invstd[ci] / m;
                for b in 0..bsz {
                    for i in 0..h {
                        for j in 0..w {
                            gx4[[b, ci, i, j]] = k
                                * (m * g4[[b, ci, i, j]]
                                    - gbeta[ci]
                                    - xh4[[b, ci, i, j]] * ggamma[ci]);
                        }
                    }
                }
            }
        }
        sink.add(ix, gx);
        sink.add(ig, ggamma.into_dyn());
        sink.add(ib, gbeta.into_dyn());
    });
    (out, stats)
}

/// Batch normalization in evaluation mode, using stored running statistics.
pub fn batchnorm_eval<'t>(
    x: Var<'t>,
    gamma: Var<'t>,
    beta: Var<'t>,
    running_mean: &Array1<f64>,
    running_var: &Array1<f64>,
    eps: f64,
) -> Var<'t> {
    let tape = x.tape();
    let c = running_mean.len();
    let invstd: Array1<f64> = running_var.mapv(|v| 1.0 / (v + eps).sqrt());
    let shape = [1, c, 1, 1];
    let mean_c = tape.constant(
        running_mean
            .clone()
            .into_shape_with_order(IxDyn(&shape))
            .unwrap(),
    );
    let invstd_c = tape.constant(invstd.into_shape_with_order(IxDyn(&shape)).unwrap());
    let g4 = gamma.reshape(&shape);
    let b4 = beta.reshape(&shape);
    x.sub(mean_c).mul(invstd_c).mul(g4).add(b4)
}

#[cfg(test)]
mod tests {
    use super::super::Tape;
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array4;
    use rand::SeedableRng;

    fn rand_tensor(shape: &[usize], seed: u64) -> ArrayD<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ArrayD::from_shape_fn(IxDyn(shape), |_| rng.gen::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn conv2d_known_kernel() {
        // 1x1 input channel, 3x3 image, identity-like 1x1 kernel scaled by 2.
        let t = Tape::new();
        let x = t.leaf(rand_tensor(&[1, 1, 3, 3], 0));
        let w = t.leaf(ArrayD::from_elem(IxDyn(&[1, 1, 1, 1]), 2.0));
        let b = t.leaf(ArrayD::from_elem(IxDyn(&[1]), 0.5));
        let y = x.conv2d(w, b, 1, 0);
        let xv = x.value();
        let yv = y.value();
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(yv[[0, 0, i, j]], 2.0 * xv[[0, 0, i, j]] + 0.5);
            }
        }
    }

    #[test]
    fn conv2d_matches_direct_sum() {
        let t = Tape::new();
        let x = t.leaf(rand_tensor(&[2, 3, 5, 5], 1));
        let w = t.leaf(rand_tensor(&[4, 3, 3, 3], 2));
        let b = t.leaf(rand_tensor(&[4], 3));
        let y = x.conv2d(w, b, 1, 1);
        assert_eq!(y.shape(), vec![2, 4, 5, 5]);
        let (xv, wv, bv, yv) = (x.value(), w.value(), b.value(), y.value());
        // Spot-check a few positions against the definition.
        for (bi, co, oy, ox) in [(0usize, 0usize, 0usize, 0usize), (1, 3, 2, 4), (0, 2, 4, 1)] {
            let mut acc = bv[[co]];
            for ci in 0..3 {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let iy = oy as isize + ky as isize - 1;
                        let ixp = ox as isize + kx as isize - 1;
                        if iy >= 0 && iy < 5 && ixp >= 0 && ixp < 5 {
                            acc += xv[[bi, ci, iy as usize, ixp as usize]]
                                * wv[[co, ci, ky, kx]];
                        }
                    }
                }
            }
            assert_abs_diff_eq!(yv[[bi, co, oy, ox]], acc, epsilon = 1e-12);
        }
    }

    #[test]
    fn conv2d_gradients_match_finite_differences() {
        let run = |xa: &ArrayD<f64>, wa: &ArrayD<f64>, ba: &ArrayD<f64>| -> f64 {
            let t = Tape::new();
            let x = t.leaf(xa.clone());
            let w = t.leaf(wa.clone());
            let b = t.leaf(ba.clone());
            // Square the output so the loss is nonlinear in every path.
            let y = x.conv2d(w, b, 2, 1);
            y.mul(y).sum_all().scalar_value()
        };
        let xa = rand_tensor(&[2, 2, 4, 4], 10);
        let wa = rand_tensor(&[3, 2, 3, 3], 11);
        let ba = rand_tensor(&[3], 12);

        let t = Tape::new();
        let x = t.leaf(xa.clone());
        let w = t.leaf(wa.clone());
        let b = t.leaf(ba.clone());
        let y = x.conv2d(w, b, 2, 1);
        let loss = y.mul(y).sum_all();
        let grads = t.backward(loss);

        let eps = 1e-6;
        for (var, arr) in [(x, &xa), (w, &wa), (b, &ba)] {
            let g = grads.get(var).unwrap();
            for flat in 0..arr.len().min(20) {
                let mut plus = arr.clone();
                let mut minus = arr.clone();
                *plus.iter_mut().nth(flat).unwrap() += eps;
                *minus.iter_mut().nth(flat).unwrap() -= eps;
                let (fp, fm) = match var.id() == x.id() {
                    true => (run(&plus, &wa, &ba), run(&minus, &wa, &ba)),
                    false if var.id() == w.id() => (run(&xa, &plus, &ba), run(&xa, &minus, &ba)),
                    false => (run(&xa, &wa, &plus), run(&xa, &wa, &minus)),
                };
                let fd = (fp - fm) / (2.0 * eps);
                let an = *g.iter().nth(flat).unwrap();
                assert_abs_diff_eq!(an, fd, epsilon = 1e-5);
            }
        }
    }

    #[test]
    fn maxpool_selects_max_and_routes_gradient() {
        let t = Tape::new();
        let mut xa = Array4::zeros((1, 1, 2, 2));
        xa[[0, 0, 0, 0]] = 1.0;
        xa[[0, 0, 0, 1]] = 5.0;
        xa[[0, 0, 1, 0]] = 2.0;
        xa[[0, 0, 1, 1]] = 3.0;
        let x = t.leaf(xa.into_dyn());
        let y = x.maxpool2();
        assert_abs_diff_eq!(y.value()[[0, 0, 0, 0]], 5.0);
        let g = t.backward(y.sum_all());
        let gx = g.get(x).unwrap();
        assert_abs_diff_eq!(gx[[0, 0, 0, 1]], 1.0);
        assert_abs_diff_eq!(gx[[0, 0, 0, 0]], 0.0);
    }

    #[test]
    fn upsample_then_sum_grad_counts_replicas() {
        let t = Tape::new();
        let x = t.leaf(rand_tensor(&[1, 2, 2, 2], 4));
        let y = x.upsample2();
        assert_eq!(y.shape(), vec![1, 2, 4, 4]);
        let g = t.backward(y.sum_all());
        let gx = g.get(x).unwrap();
        for v in gx.iter() {
            assert_abs_diff_eq!(*v, 4.0);
        }
    }

    #[test]
    fn reflect_pad_mirrors_without_edge_repeat() {
        let t = Tape::new();
        let mut xa = Array4::zeros((1, 1, 1, 3));
        xa[[0, 0, 0, 0]] = 1.0;
        xa[[0, 0, 0, 1]] = 2.0;
        xa[[0, 0, 0, 2]] = 3.0;
        let x = t.leaf(xa.into_dyn());
        let y = x.reflect_pad2d(0, 0, 2, 2);
        let yv = y.value();
        let row: Vec<f64> = (0..7).map(|j| yv[[0, 0, 0, j]]).collect();
        assert_eq!(row, vec![3.0, 2.0, 1.0, 2.0, 3.0, 2.0, 1.0]);
    }

    #[test]
    fn crop_inverts_reflect_pad() {
        let t = Tape::new();
        let x = t.leaf(rand_tensor(&[1, 2, 3, 5], 5));
        let y = x.reflect_pad2d(1, 2, 2, 1).crop2d(1, 2, 3, 5);
        assert_eq!(&*y.value(), &*x.value());
    }

    #[test]
    fn dropout_eval_is_identity_and_train_masks() {
        let t = Tape::new();
        let x = t.leaf(rand_tensor(&[4, 4], 6));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y_eval = x.dropout(0.5, false, &mut rng);
        assert_eq!(y_eval.id(), x.id());
        let y_train = x.dropout(0.5, true, &mut rng);
        let yv = y_train.value();
        let xv = x.value();
        for (a, b) in yv.iter().zip(xv.iter()) {
            assert!(*a == 0.0 || (*a - 2.0 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn batchnorm_train_normalizes() {
        let t = Tape::new();
        let x = t.leaf(rand_tensor(&[4, 3, 5, 5], 7));
        let gamma = t.leaf(ArrayD::from_elem(IxDyn(&[3]), 1.0));
        let beta = t.leaf(ArrayD::zeros(IxDyn(&[3])));
        let (y, stats) = batchnorm_train(x, gamma, beta, 1e-5);
        let yv = y.value();
        let y4 = yv.view().into_dimensionality::<Ix4>().unwrap();
        for ci in 0..3 {
            let mut s = 0.0;
            let mut s2 = 0.0;
            let m = 4.0 * 25.0;
            for b in 0..4 {
                for i in 0..5 {
                    for j in 0..5 {
                        s += y4[[b, ci, i, j]];
                        s2 += y4[[b, ci, i, j]] * y4[[b, ci, i, j]];
                    }
                }
            }
            assert_abs_diff_eq!(s / m, 0.0, epsilon = 1e-9);
            assert_abs_diff_eq!(s2 / m, 1.0, epsilon = 1e-3);
            assert!(stats.var[ci] > 0.0);
        }
    }

    #[test]
    fn batchnorm_eval_uses_running_stats() {
        let t = Tape::new();
        let x = t.leaf(ArrayD::from_elem(IxDyn(&[1, 2, 1, 1]), 3.0));
        let gamma = t.leaf(ArrayD::from_elem(IxDyn(&[2]), 2.0));
        let beta = t.leaf(ArrayD::from_elem(IxDyn(&[2]), 1.0));
        let rm = Array1::from_vec(vec![1.0, 3.0]);
        let rv = Array1::from_vec(vec![4.0, 1.0]);
        let y = batchnorm_eval(x, gamma, beta, &rm, &rv, 0.0);
        let yv = y.value();
        assert_abs_diff_eq!(yv[[0, 0, 0, 0]], 2.0 * (3.0 - 1.0) / 2.0 + 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(yv[[0, 1, 0, 0]], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn parallel_and_sequential_conv_agree_bitwise() {
        let xa = rand_tensor(&[3, 2, 6, 6], 8);
        let wa = rand_tensor(&[4, 2, 3, 3], 9);
        let ba = rand_tensor(&[4], 10);
        let mut outs = Vec::new();
        let mut grads = Vec::new();
        for parallel in [false, true] {
            let t = Tape::new().with_parallel(parallel);
            let x = t.leaf(xa.clone());
            let w = t.leaf(wa.clone());
            let b = t.leaf(ba.clone());
            let y = x.conv2d(w, b, 1, 1);
            outs.push(y.value().as_ref().clone());
            let g = t.backward(y.mul(y).sum_all());
            grads.push((
                g.get(x).unwrap().clone(),
                g.get(w).unwrap().clone(),
                g.get(b).unwrap().clone(),
            ));
        }
        assert_eq!(outs[0], outs[1]);
        assert_eq!(grads[0], grads[1]);
    }
}
