//! Elementwise primitives and reductions.

use std::any::Any;

use super::{Backward, Graph, Var};
use crate::error::{bail, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

macro_rules! any_impl {
    () => {
        fn as_any(&self) -> &dyn Any {
            self
        }
    };
}
pub(crate) use any_impl;

struct Add;
struct Sub;
struct Mul;
struct Scale<T>(T);
struct Relu;
struct Sigmoid;
struct AddTiled;
struct Sum;
struct MeanAxis {
    outer: usize,
    axis: usize,
    inner: usize,
}

impl<T: Scalar> Backward<T> for Add {
    fn name(&self) -> &'static str {
        "add"
    }
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T], _: &[bool]) -> Vec<Option<Vec<T>>> {
        vec![Some(g.to_vec()), Some(g.to_vec())]
    }
    any_impl!();
}

impl<T: Scalar> Backward<T> for Sub {
    fn name(&self) -> &'static str {
        "sub"
    }
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T], _: &[bool]) -> Vec<Option<Vec<T>>> {
        vec![Some(g.to_vec()), Some(g.iter().map(|&v| -v).collect())]
    }
    any_impl!();
}

impl<T: Scalar> Backward<T> for Mul {
    fn name(&self) -> &'static str {
        "mul"
    }
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let (a, b) = (x[0].data(), x[1].data());
        vec![
            needs[0].then(|| g.iter().zip(b).map(|(&g, &b)| g * b).collect()),
            needs[1].then(|| g.iter().zip(a).map(|(&g, &a)| g * a).collect()),
        ]
    }
    any_impl!();
}

impl<T: Scalar> Backward<T> for Scale<T> {
    fn name(&self) -> &'static str {
        "scale"
    }
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T], _: &[bool]) -> Vec<Option<Vec<T>>> {
        vec![Some(g.iter().map(|&v| v * self.0).collect())]
    }
    any_impl!();
}

impl<T: Scalar> Backward<T> for Relu {
    fn name(&self) -> &'static str {
        "relu"
    }
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &[T], _: &[bool]) -> Vec<Option<Vec<T>>> {
        let gx = x[0]
            .data()
            .iter()
            .zip(g)
            .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
            .collect();
        vec![Some(gx)]
    }
    any_impl!();
}

impl<T: Scalar> Backward<T> for Sigmoid {
    fn name(&self) -> &'static str {
        "sigmoid"
    }
    fn backward(&self, _: &[&Tensor<T>], y: &Tensor<T>, g: &[T], _: &[bool]) -> Vec<Option<Vec<T>>> {
        let gx = y.data().iter().zip(g).map(|(&y, &g)| g * y * (T::one() - y)).collect();
        vec![Some(gx)]
    }
    any_impl!();
}

impl<T: Scalar> Backward<T> for AddTiled {
    fn name(&self) -> &'static str {
        "add_tiled"
    }
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let tile = x[1].numel();
        let gb = needs[1].then(|| {
            let mut acc = vec![T::zero(); tile];
            for chunk in g.chunks(tile) {
                acc.iter_mut().zip(chunk).for_each(|(a, &v)| *a = *a + v);
            }
            acc
        });
        vec![needs[0].then(|| g.to_vec()), gb]
    }
    any_impl!();
}

impl<T: Scalar> Backward<T> for Sum {
    fn name(&self) -> &'static str {
        "sum"
    }
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &[T], _: &[bool]) -> Vec<Option<Vec<T>>> {
        vec![Some(vec![g[0]; x[0].numel()])]
    }
    any_impl!();
}

impl<T: Scalar> Backward<T> for MeanAxis {
    fn name(&self) -> &'static str {
        "mean_axis"
    }
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T], _: &[bool]) -> Vec<Option<Vec<T>>> {
        let inv = T::one() / T::of(self.axis as f64);
        let mut gx = vec![T::zero(); self.outer * self.axis * self.inner];
        for o in 0..self.outer {
            for a in 0..self.axis {
                let dst = &mut gx[(o * self.axis + a) * self.inner..][..self.inner];
                let src = &g[o * self.inner..][..self.inner];
                dst.iter_mut().zip(src).for_each(|(d, &s)| *d = s * inv);
            }
        }
        vec![Some(gx)]
    }
    any_impl!();
}

fn same_shape<T: Scalar>(g: &Graph<T>, a: Var, b: Var, op: &str) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        bail!(Dimension, "{op}: shapes {:?} and {:?} differ", g.shape(a), g.shape(b));
    }
    Ok(())
}

fn map<T: Scalar>(t: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    Tensor::from_fn(t.shape(), |i| f(t.data()[i]))
}

impl<T: Scalar> Graph<T> {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, a, b, "add")?;
        let (x, y) = (self.value(a), self.value(b));
        let out = Tensor::from_fn(x.shape(), |i| x.data()[i] + y.data()[i]);
        Ok(self.push(out, vec![a, b], Add))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, a, b, "sub")?;
        let (x, y) = (self.value(a), self.value(b));
        let out = Tensor::from_fn(x.shape(), |i| x.data()[i] - y.data()[i]);
        Ok(self.push(out, vec![a, b], Sub))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, a, b, "mul")?;
        let (x, y) = (self.value(a), self.value(b));
        let out = Tensor::from_fn(x.shape(), |i| x.data()[i] * y.data()[i]);
        Ok(self.push(out, vec![a, b], Mul))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = map(self.value(a), |v| v * c);
        self.push(out, vec![a], Scale(c))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = map(self.value(a), |v| if v > T::zero() { v } else { T::zero() });
        self.push(out, vec![a], Relu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = map(self.value(a), logistic);
        self.push(out, vec![a], Sigmoid)
    }

    /// `a + tile(b)`: `b` repeats along the leading elements of `a`, e.g. a
    /// positional table `[L x D]` added to every location of `[N*L x D]`.
    pub fn add_tiled(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.numel() % y.numel() != 0 {
            bail!(Dimension, "add_tiled: {:?} is not a tiling of {:?}", x.shape(), y.shape());
        }
        let n = y.numel();
        let out = Tensor::from_fn(x.shape(), |i| x.data()[i] + y.data()[i % n]);
        Ok(self.push(out, vec![a, b], AddTiled))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, vec![a], Sum)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel();
        let s = self.sum(a);
        self.scale(s, T::one() / T::of(n as f64))
    }

    /// Mean over one axis; the axis is removed from the shape.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            bail!(Dimension, "mean_axis: axis {axis} out of range for {:?}", shape);
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let extent = shape[axis];
        let mut out_shape: Vec<usize> = shape.clone();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let x = self.value(a).data();
        let inv = T::one() / T::of(extent as f64);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            let dst = &mut out[o * inner..][..inner];
            for e in 0..extent {
                let src = &x[(o * extent + e) * inner..][..inner];
                dst.iter_mut().zip(src).for_each(|(d, &s)| *d = *d + s);
            }
            dst.iter_mut().for_each(|d| *d = *d * inv);
        }
        let out = Tensor::new(out_shape, out)?;
        Ok(self.push(out, vec![a], MeanAxis { outer, axis: extent, inner }))
    }
}

pub(crate) fn logistic<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
