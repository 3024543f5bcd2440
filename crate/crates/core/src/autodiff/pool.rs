//! 2x2x2 max pooling (ceil mode) and nearest-neighbour upsampling over
//! `[W, H, L, C]` maps.

use std::any::Any;

use super::conv::dims4;
use super::elementwise::any_impl;
use super::{Backward, Graph, Var};
use crate::error::{bail, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

struct MaxPool {
    argmax: Vec<usize>,
    in_len: usize,
}

struct Upsample {
    src: [usize; 4],
    dst: [usize; 4],
}

impl<T: Scalar> Backward<T> for MaxPool {
    fn name(&self) -> &'static str {
        "maxpool3"
    }
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T], _: &[bool]) -> Vec<Option<Vec<T>>> {
        let mut gx = vec![T::zero(); self.in_len];
        for (&src, &v) in self.argmax.iter().zip(g) {
            gx[src] = gx[src] + v;
        }
        vec![Some(gx)]
    }
    any_impl!();
}

impl<T: Scalar> Backward<T> for Upsample {
    fn name(&self) -> &'static str {
        "upsample3"
    }
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T], _: &[bool]) -> Vec<Option<Vec<T>>> {
        let [_, h, l, c] = self.src;
        let [w2, h2, l2, _] = self.dst;
        let mut gx = vec![T::zero(); self.src.iter().product()];
        for x in 0..w2 {
            for y in 0..h2 {
                for z in 0..l2 {
                    let dst = (((x / 2) * h + y / 2) * l + z / 2) * c;
                    let src = ((x * h2 + y) * l2 + z) * c;
                    for ch in 0..c {
                        gx[dst + ch] = gx[dst + ch] + g[src + ch];
                    }
                }
            }
        }
        vec![Some(gx)]
    }
    any_impl!();
}

/// Pooled extent in ceil mode.
pub fn pooled(n: usize) -> usize {
    n.div_ceil(2)
}

impl<T: Scalar> Graph<T> {
    /// Halves `W, H, L` (rounding up). Odd extents are edge-replicated before
    /// pooling. Gradient goes to the lowest linear index among tied maxima.
    pub fn maxpool3(&mut self, a: Var) -> Result<Var> {
        let [w, h, l, c] = dims4(self.shape(a), "maxpool3")?;
        let (w2, h2, l2) = (pooled(w), pooled(h), pooled(l));
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(w2 * h2 * l2 * c);
        let mut argmax = Vec::with_capacity(w2 * h2 * l2 * c);
        let mut cand = [0usize; 8];
        for i in 0..w2 {
            for j in 0..h2 {
                for k in 0..l2 {
                    let mut n = 0;
                    for xi in [2 * i, (2 * i + 1).min(w - 1)] {
                        for yi in [2 * j, (2 * j + 1).min(h - 1)] {
                            for zi in [2 * k, (2 * k + 1).min(l - 1)] {
                                cand[n] = ((xi * h + yi) * l + zi) * c;
                                n += 1;
                            }
                        }
                    }
                    cand.sort_unstable();
                    for ch in 0..c {
                        let mut best = cand[0] + ch;
                        for &p in &cand[1..] {
                            if x[p + ch] > x[best] {
                                best = p + ch;
                            }
                        }
                        out.push(x[best]);
                        argmax.push(best);
                    }
                }
            }
        }
        let in_len = x.len();
        let out = Tensor::new(vec![w2, h2, l2, c], out)?;
        Ok(self.push(out, vec![a], MaxPool { argmax, in_len }))
    }

    /// Nearest-neighbour doubling of `W, H, L`.
    pub fn upsample3(&mut self, a: Var) -> Result<Var> {
        let [w, h, l, _] = dims4(self.shape(a), "upsample3")?;
        self.upsample3_to(a, [2 * w, 2 * h, 2 * l])
    }

    /// Nearest-neighbour upsampling to `target`, where each target extent is
    /// `2n` or `2n - 1` (the latter crops the replicated last slice, undoing a
    /// ceil-mode pool of an odd extent).
    pub fn upsample3_to(&mut self, a: Var, target: [usize; 3]) -> Result<Var> {
        let src = dims4(self.shape(a), "upsample3")?;
        for (d, (&t, &s)) in target.iter().zip(&src[..3]).enumerate() {
            if t != 2 * s && t + 1 != 2 * s {
                bail!(Dimension, "upsample3: axis {d} cannot go from {s} to {t}");
            }
        }
        let [_, h, l, c] = src;
        let [w2, h2, l2] = target;
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(w2 * h2 * l2 * c);
        for xi in 0..w2 {
            for yi in 0..h2 {
                for zi in 0..l2 {
                    let p = (((xi / 2) * h + yi / 2) * l + zi / 2) * c;
                    out.extend_from_slice(&x[p..p + c]);
                }
            }
        }
        let dst = [w2, h2, l2, c];
        let out = Tensor::new(dst.to_vec(), out)?;
        Ok(self.push(out, vec![a], Upsample { src, dst }))
    }
}
