//! Matrix products.

use std::any::Any;

use super::elementwise::any_impl;
use super::{Backward, Graph, Var};
use crate::error::{bail, Result};
use crate::gemm::{gemm, View};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

struct Matmul {
    m: usize,
    k: usize,
    n: usize,
}

/// `x[m x k] * w[k x n] (+ b[n])`; `has_bias` marks a third input.
struct Linear {
    m: usize,
    k: usize,
    n: usize,
    has_bias: bool,
}

fn matmul_backward<T: Scalar>(
    (m, k, n): (usize, usize, usize),
    a: &[T],
    b: &[T],
    g: &[T],
    needs: (bool, bool),
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    // da = g * b^T, db = a^T * g
    let da = needs.0.then(|| {
        let mut da = vec![T::zero(); m * k];
        gemm(
            m,
            n,
            k,
            T::one(),
            g,
            View::row_major(0, n),
            b,
            View::row_major(0, n).t(),
            T::zero(),
            &mut da,
            View::row_major(0, k),
        );
        da
    });
    let db = needs.1.then(|| {
        let mut db = vec![T::zero(); k * n];
        gemm(
            k,
            m,
            n,
            T::one(),
            a,
            View::row_major(0, k).t(),
            g,
            View::row_major(0, n),
            T::zero(),
            &mut db,
            View::row_major(0, n),
        );
        db
    });
    (da, db)
}

impl<T: Scalar> Backward<T> for Matmul {
    fn name(&self) -> &'static str {
        "matmul"
    }
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let (da, db) =
            matmul_backward((self.m, self.k, self.n), x[0].data(), x[1].data(), g, (needs[0], needs[1]));
        vec![da, db]
    }
    any_impl!();
}

impl<T: Scalar> Backward<T> for Linear {
    fn name(&self) -> &'static str {
        "linear"
    }
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let (dx, dw) =
            matmul_backward((self.m, self.k, self.n), x[0].data(), x[1].data(), g, (needs[0], needs[1]));
        let mut out = vec![dx, dw];
        if self.has_bias {
            out.push(needs[2].then(|| {
                let mut db = vec![T::zero(); self.n];
                for row in g.chunks(self.n) {
                    db.iter_mut().zip(row).for_each(|(d, &v)| *d = *d + v);
                }
                db
            }));
        }
        out
    }
    any_impl!();
}

pub(crate) fn matmul_values<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    gemm(
        m,
        k,
        n,
        T::one(),
        a,
        View::row_major(0, k),
        b,
        View::row_major(0, n),
        T::zero(),
        &mut c,
        View::row_major(0, n),
    );
    c
}

impl<T: Scalar> Graph<T> {
    /// Matrix product of `[m x k]` and `[k x n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (&[m, k], &[k2, n]) = (&sa[..], &sb[..]) else {
            bail!(Dimension, "matmul needs matrices, got {:?} and {:?}", sa, sb);
        };
        if k != k2 {
            bail!(Dimension, "matmul inner dimensions differ: {:?} x {:?}", sa, sb);
        }
        let c = matmul_values(self.value(a).data(), self.value(b).data(), m, k, n);
        let out = Tensor::new(vec![m, n], c)?;
        Ok(self.push(out, vec![a, b], Matmul { m, k, n }))
    }

    /// Affine map over the last axis: `x[..., k] * w[k x n] + b[n]`. Leading
    /// axes of `x` are kept.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        let [k2, n] = sw[..] else {
            bail!(Dimension, "linear weight must be a matrix, got {:?}", sw);
        };
        let k = *sx.last().unwrap();
        if k != k2 {
            bail!(Dimension, "linear: input width {k} vs weight {:?}", sw);
        }
        if let Some(b) = b {
            if self.shape(b) != [n] {
                bail!(Dimension, "linear: bias {:?} for output width {n}", self.shape(b));
            }
        }
        let m = self.value(x).numel() / k;
        let mut c = matmul_values(self.value(x).data(), self.value(w).data(), m, k, n);
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in c.chunks_mut(n) {
                row.iter_mut().zip(bias).for_each(|(c, &b)| *c = *c + b);
            }
        }
        let mut shape = sx;
        *shape.last_mut().unwrap() = n;
        let out = Tensor::new(shape, c)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(out, inputs, Linear { m, k, n, has_bias: b.is_some() }))
    }
}
