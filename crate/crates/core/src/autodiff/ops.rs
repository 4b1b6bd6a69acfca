//! Elementwise, reduction, shape and matrix ops.
//!
//! Binary ops accept a right operand whose shape broadcasts into the left
//! operand's shape (equal dims or 1s, plus 0-d scalars); gradients to the
//! broadcast side are summed back over the expanded axes.

use super::{Tape, Var};
use ndarray::{concatenate, ArrayD, ArrayViewD, Axis, IxDyn, Slice};
use std::rc::Rc;

fn bcast<'a>(b: &'a ArrayD<f64>, shape: &[usize]) -> ArrayViewD<'a, f64> {
    b.broadcast(IxDyn(shape))
        .unwrap_or_else(|| panic!("cannot broadcast {:?} to {:?}", b.shape(), shape))
}

/// Sum `g` down to `shape` (inverse of broadcasting).
fn reduce_to(g: ArrayD<f64>, shape: &[usize]) -> ArrayD<f64> {
    if g.shape() == shape {
        return g;
    }
    if shape.is_empty() {
        return ArrayD::from_elem(IxDyn(&[]), g.sum());
    }
    let mut out = g;
    // Broadcasting aligns trailing axes; collapse extra leading axes first.
    while out.ndim() > shape.len() {
        out = out.sum_axis(Axis(0));
    }
    for ax in 0..shape.len() {
        if shape[ax] == 1 && out.shape()[ax] != 1 {
            out = sum_keep_arr(&out, ax);
        }
    }
    out
}

fn sum_keep_arr(x: &ArrayD<f64>, axis: usize) -> ArrayD<f64> {
    x.sum_axis(Axis(axis)).insert_axis(Axis(axis))
}

fn unary(
    a: Var<'_>,
    value: ArrayD<f64>,
    grad: impl Fn(&ArrayD<f64>) -> ArrayD<f64> + 'static,
) -> Var<'_> {
    let tape = a.tape();
    let id = a.id();
    tape.push_op(value, move |g, sink| sink.add(id, grad(g)))
}

impl Tape {
    pub(crate) fn push_op(
        &self,
        value: ArrayD<f64>,
        backward: impl Fn(&ArrayD<f64>, &mut super::GradSink) + 'static,
    ) -> Var<'_> {
        self.push(value, Some(Box::new(backward)))
    }

    /// Concatenate along `axis`; gradient splits back.
    pub fn concat<'t>(&'t self, axis: usize, parts: &[Var<'t>]) -> Var<'t> {
        assert!(!parts.is_empty());
        let values: Vec<Rc<ArrayD<f64>>> = parts.iter().map(|p| p.value()).collect();
        let views: Vec<ArrayViewD<f64>> = values.iter().map(|v| v.view()).collect();
        // Force standard layout: downstream ops may flatten via as_slice.
        let value = concatenate(Axis(axis), &views)
            .expect("concat shape mismatch")
            .as_standard_layout()
            .to_owned();
        let ids: Vec<usize> = parts.iter().map(|p| p.id()).collect();
        let sizes: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        self.push_op(value, move |g, sink| {
            let mut offset = 0;
            for (id, len) in ids.iter().zip(&sizes) {
                let part = g
                    .slice_axis(Axis(axis), Slice::from(offset..offset + len))
                    .to_owned();
                sink.add(*id, part);
                offset += len;
            }
        })
    }
}

impl<'t> Var<'t> {
    pub fn add(self, b: Var<'t>) -> Var<'t> {
        let (av, bv) = (self.value(), b.value());
        let value = &*av + &bcast(&bv, av.shape());
        let (ia, ib) = (self.id(), b.id());
        let bshape = bv.shape().to_vec();
        self.tape().push_op(value, move |g, sink| {
            sink.add(ia, g.clone());
            sink.add(ib, reduce_to(g.clone(), &bshape));
        })
    }

    pub fn sub(self, b: Var<'t>) -> Var<'t> {
        let (av, bv) = (self.value(), b.value());
        let value = &*av - &bcast(&bv, av.shape());
        let (ia, ib) = (self.id(), b.id());
        let bshape = bv.shape().to_vec();
        self.tape().push_op(value, move |g, sink| {
            sink.add(ia, g.clone());
            sink.add(ib, reduce_to(-g.clone(), &bshape));
        })
    }

    pub fn mul(self, b: Var<'t>) -> Var<'t> {
        let (av, bv) = (self.value(), b.value());
        let value = &*av * &bcast(&bv, av.shape());
        let (ia, ib) = (self.id(), b.id());
        let bshape = bv.shape().to_vec();
        self.tape().push_op(value, move |g, sink| {
            sink.add(ia, g * &bcast(&bv, g.shape()));
            sink.add(ib, reduce_to(g * &*av, &bshape));
        })
    }

    pub fn div(self, b: Var<'t>) -> Var<'t> {
        let (av, bv) = (self.value(), b.value());
        let value = &*av / &bcast(&bv, av.shape());
        let (ia, ib) = (self.id(), b.id());
        let bshape = bv.shape().to_vec();
        self.tape().push_op(value, move |g, sink| {
            let bb = bcast(&bv, g.shape());
            sink.add(ia, g / &bb);
            let gb = -(g * &*av) / (&bb * &bb);
            sink.add(ib, reduce_to(gb, &bshape));
        })
    }

    pub fn neg(self) -> Var<'t> {
        let value = -&*self.value();
        unary(self, value, |g| -g.clone())
    }

    pub fn add_scalar(self, s: f64) -> Var<'t> {
        let value = &*self.value() + s;
        unary(self, value, |g| g.clone())
    }

    pub fn mul_scalar(self, s: f64) -> Var<'t> {
        let value = &*self.value() * s;
        unary(self, value, move |g| g * s)
    }

    pub fn exp(self) -> Var<'t> {
        let value = self.value().mapv(f64::exp);
        let out = value.clone();
        unary(self, value, move |g| g * &out)
    }

    /// `ln(max(x, floor))`; gradient is 1/x where x > floor, 0 below.
    pub fn ln_clamped(self, floor: f64) -> Var<'t> {
        let av = self.value();
        let value = av.mapv(|x| x.max(floor).ln());
        unary(self, value, move |g| {
            ndarray::Zip::from(g)
                .and(&*av)
                .map_collect(|&g, &x| if x > floor { g / x } else { 0.0 })
        })
    }

    pub fn sigmoid(self) -> Var<'t> {
        let value = self.value().mapv(|x| {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        });
        let s = value.clone();
        unary(self, value, move |g| {
            ndarray::Zip::from(g).and(&s).map_collect(|&g, &s| g * s * (1.0 - s))
        })
    }

    pub fn relu(self) -> Var<'t> {
        let av = self.value();
        let value = av.mapv(|x| x.max(0.0));
        unary(self, value, move |g| {
            ndarray::Zip::from(g)
                .and(&*av)
                .map_collect(|&g, &x| if x > 0.0 { g } else { 0.0 })
        })
    }

    /// `sqrt(max(x, 0))` with gradient 0 at the origin.
    pub fn sqrt_guard(self) -> Var<'t> {
        let value = self.value().mapv(|x| x.max(0.0).sqrt());
        let s = value.clone();
        unary(self, value, move |g| {
            ndarray::Zip::from(g)
                .and(&s)
                .map_collect(|&g, &s| if s > 1e-12 { 0.5 * g / s } else { 0.0 })
        })
    }

    pub fn softmax(self, axis: usize) -> Var<'t> {
        let av = self.value();
        let mut value = av.as_ref().clone();
        for mut lane in value.lanes_mut(Axis(axis)) {
            let max = lane.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            lane.mapv_inplace(|x| (x - max).exp());
            let sum: f64 = lane.sum();
            lane.mapv_inplace(|x| x / sum);
        }
        let s = value.clone();
        unary(self, value, move |g| {
            let dot = sum_keep_arr(&(g * &s), axis);
            &s * &(g - &bcast(&dot, g.shape()))
        })
    }

    pub fn log_softmax(self, axis: usize) -> Var<'t> {
        let av = self.value();
        let mut value = av.as_ref().clone();
        for mut lane in value.lanes_mut(Axis(axis)) {
            let max = lane.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = lane.iter().map(|x| (x - max).exp()).sum::<f64>().ln() + max;
            lane.mapv_inplace(|x| x - lse);
        }
        let ls = value.clone();
        unary(self, value, move |g| {
            let gsum = sum_keep_arr(g, axis);
            g - &(ls.mapv(f64::exp) * &bcast(&gsum, g.shape()))
        })
    }

    pub fn sum_all(self) -> Var<'t> {
        let shape = self.shape();
        let value = ArrayD::from_elem(IxDyn(&[]), self.value().sum());
        unary(self, value, move |g| {
            ArrayD::from_elem(IxDyn(&shape), *g.iter().next().unwrap())
        })
    }

    pub fn mean_all(self) -> Var<'t> {
        let n = self.value().len() as f64;
        self.sum_all().mul_scalar(1.0 / n)
    }

    /// Sum over `axis`, keeping it as size 1.
    pub fn sum_axis_keep(self, axis: usize) -> Var<'t> {
        let value = sum_keep_arr(&self.value(), axis);
        let shape = self.shape();
        unary(self, value, move |g| bcast(g, &shape).to_owned())
    }

    /// Reorder axes so output axis `i` is input axis `perm[i]`.
    pub fn permute_axes(self, perm: &[usize]) -> Var<'t> {
        let v = self.value();
        assert_eq!(perm.len(), v.ndim(), "permutation rank mismatch");
        let mut inv = vec![0usize; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        let value = v
            .view()
            .permuted_axes(IxDyn(perm))
            .as_standard_layout()
            .to_owned();
        let id = self.id();
        self.tape().push_op(value, move |g, sink| {
            sink.add(
                id,
                g.view()
                    .permuted_axes(IxDyn(&inv))
                    .as_standard_layout()
                    .to_owned(),
            );
        })
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'t> {
        let old_shape = self.shape();
        assert_eq!(
            shape.iter().product::<usize>(),
            old_shape.iter().product::<usize>(),
            "reshape element count mismatch"
        );
        let value =
            ArrayD::from_shape_vec(IxDyn(shape), self.value().iter().cloned().collect()).unwrap();
        unary(self, value, move |g| {
            ArrayD::from_shape_vec(IxDyn(&old_shape), g.iter().cloned().collect()).unwrap()
        })
    }

    pub fn slice_axis(self, axis: usize, from: usize, to: usize) -> Var<'t> {
        let av = self.value();
        let value = av.slice_axis(Axis(axis), Slice::from(from..to)).to_owned();
        let shape = self.shape();
        unary(self, value, move |g| {
            let mut full = ArrayD::zeros(IxDyn(&shape));
            full.slice_axis_mut(Axis(axis), Slice::from(from..to))
                .assign(g);
            full
        })
    }

    /// 2-D matrix product.
    pub fn matmul(self, b: Var<'t>) -> Var<'t> {
        let (av, bv) = (self.value(), b.value());
        let a2 = av.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        let b2 = bv.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        let value = a2.dot(&b2).into_dyn();
        let (ia, ib) = (self.id(), b.id());
        self.tape().push_op(value, move |g, sink| {
            let g2 = g.view().into_dimensionality::<ndarray::Ix2>().unwrap();
            let a2 = av.view().into_dimensionality::<ndarray::Ix2>().unwrap();
            let b2 = bv.view().into_dimensionality::<ndarray::Ix2>().unwrap();
            sink.add(ia, g2.dot(&b2.t()).into_dyn());
            sink.add(ib, a2.t().dot(&g2).into_dyn());
        })
    }
}
