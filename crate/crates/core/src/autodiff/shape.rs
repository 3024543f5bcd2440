//! Shape-only primitives: reshaping, transposition and concatenation.

use std::any::Any;

use super::elementwise::any_impl;
use super::{Backward, Graph, Var};
use crate::error::{bail, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

struct Reshape;
struct Transpose2d {
    rows: usize,
    cols: usize,
}
struct ConcatLast {
    ca: usize,
    cb: usize,
}

impl<T: Scalar> Backward<T> for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T], _: &[bool]) -> Vec<Option<Vec<T>>> {
        vec![Some(g.to_vec())]
    }
    any_impl!();
}

impl<T: Scalar> Backward<T> for Transpose2d {
    fn name(&self) -> &'static str {
        "transpose2d"
    }
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T], _: &[bool]) -> Vec<Option<Vec<T>>> {
        vec![Some(transpose(g, self.cols, self.rows))]
    }
    any_impl!();
}

impl<T: Scalar> Backward<T> for ConcatLast {
    fn name(&self) -> &'static str {
        "concat"
    }
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let c = self.ca + self.cb;
        let ga = needs[0].then(|| g.chunks(c).flat_map(|row| &row[..self.ca]).copied().collect());
        let gb = needs[1].then(|| g.chunks(c).flat_map(|row| &row[self.ca..]).copied().collect());
        vec![ga, gb]
    }
    any_impl!();
}

fn transpose<T: Scalar>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

impl<T: Scalar> Graph<T> {
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if crate::tensor::numel(shape) != self.value(a).numel() {
            bail!(Dimension, "cannot reshape {:?} to {:?}", self.shape(a), shape);
        }
        let out = Tensor::new(shape.to_vec(), self.value(a).data().to_vec())?;
        Ok(self.push(out, vec![a], Reshape))
    }

    pub fn transpose2d(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let [rows, cols] = shape[..] else {
            bail!(Dimension, "transpose2d needs a matrix, got {:?}", shape);
        };
        let out = Tensor::new(vec![cols, rows], transpose(self.value(a).data(), rows, cols))?;
        Ok(self.push(out, vec![a], Transpose2d { rows, cols }))
    }

    /// Concatenates along the last (channel) axis; leading axes must agree.
    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            bail!(Dimension, "concat: leading axes of {:?} and {:?} differ", sa, sb);
        }
        let (ca, cb) = (sa[sa.len() - 1], sb[sb.len() - 1]);
        let (xa, xb) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(xa.len() + xb.len());
        for (ra, rb) in xa.chunks(ca).zip(xb.chunks(cb)) {
            data.extend_from_slice(ra);
            data.extend_from_slice(rb);
        }
        let mut shape = sa;
        *shape.last_mut().unwrap() = ca + cb;
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, vec![a, b], ConcatLast { ca, cb }))
    }
}
