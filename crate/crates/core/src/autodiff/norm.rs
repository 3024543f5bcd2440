//! Layer normalization and group normalization (optionally per band).

use std::any::Any;

use super::conv::dims4;
use super::elementwise::any_impl;
use super::{Backward, Graph, Var};
use crate::error::{bail, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Assignment of every element to a statistic slot and an affine slot.
/// Elements are viewed as rows of width `c`; for `[W, H, L, C]` maps a row is
/// one voxel and its band is `row % l`.
#[derive(Clone, Debug)]
struct Layout {
    c: usize,
    groups: usize,
    kind: Kind,
    l: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    LayerNorm,
    GroupShared,
    GroupPerBand,
}

impl Layout {
    /// Calls `f(i, stat_slot, affine_slot)` for every element index `i < len`
    /// in order.
    #[inline]
    fn visit(&self, len: usize, mut f: impl FnMut(usize, usize, usize)) {
        let c = self.c;
        let grp: Vec<usize> = (0..c).map(|ch| ch / (c / self.groups)).collect();
        for row in 0..len / c {
            let band = if self.kind == Kind::GroupPerBand { row % self.l } else { 0 };
            for (ch, &gr) in grp.iter().enumerate() {
                let (s, a) = match self.kind {
                    Kind::LayerNorm => (row, ch),
                    Kind::GroupShared => (gr, ch),
                    Kind::GroupPerBand => (band * self.groups + gr, band * c + ch),
                };
                f(row * c + ch, s, a);
            }
        }
    }

    fn n_stats(&self, len: usize) -> usize {
        match self.kind {
            Kind::LayerNorm => len / self.c,
            Kind::GroupShared => self.groups,
            Kind::GroupPerBand => self.l * self.groups,
        }
    }
}

struct Norm<T> {
    layout: Layout,
    mean: Vec<T>,
    rstd: Vec<T>,
}

fn forward<T: Scalar>(layout: &Layout, x: &[T], gamma: &[T], beta: &[T], eps: T) -> (Vec<T>, Vec<T>, Vec<T>) {
    let ns = layout.n_stats(x.len());
    let mut sum = vec![T::zero(); ns];
    let mut count = vec![0usize; ns];
    layout.visit(x.len(), |i, s, _| {
        sum[s] = sum[s] + x[i];
        count[s] += 1;
    });
    let mean: Vec<T> = sum.iter().zip(&count).map(|(&s, &n)| s / T::of(n as f64)).collect();
    let mut sq = vec![T::zero(); ns];
    layout.visit(x.len(), |i, s, _| {
        let d = x[i] - mean[s];
        sq[s] = sq[s] + d * d;
    });
    let rstd: Vec<T> =
        sq.iter().zip(&count).map(|(&q, &n)| T::one() / (q / T::of(n as f64) + eps).sqrt()).collect();
    let mut y = vec![T::zero(); x.len()];
    layout.visit(x.len(), |i, s, a| y[i] = gamma[a] * (x[i] - mean[s]) * rstd[s] + beta[a]);
    (y, mean, rstd)
}

impl<T: Scalar> Backward<T> for Norm<T> {
    fn name(&self) -> &'static str {
        match self.layout.kind {
            Kind::LayerNorm => "layer_norm",
            Kind::GroupShared => "group_norm",
            Kind::GroupPerBand => "spectral_norm",
        }
    }

    fn backward(&self, inp: &[&Tensor<T>], _: &Tensor<T>, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let (x, gamma) = (inp[0].data(), inp[1].data());
        let lay = &self.layout;
        let ns = self.mean.len();
        let na = gamma.len();
        let mut dgamma = vec![T::zero(); na];
        let mut dbeta = vec![T::zero(); na];
        let mut a = vec![T::zero(); ns];
        let mut b = vec![T::zero(); ns];
        let mut count = vec![0usize; ns];
        lay.visit(x.len(), |i, s, k| {
            let gi = g[i];
            let xhat = (x[i] - self.mean[s]) * self.rstd[s];
            dgamma[k] = dgamma[k] + gi * xhat;
            dbeta[k] = dbeta[k] + gi;
            let dxhat = gi * gamma[k];
            a[s] = a[s] + dxhat;
            b[s] = b[s] + dxhat * xhat;
            count[s] += 1;
        });
        let dx = needs[0].then(|| {
            for s in 0..ns {
                let n = T::of(count[s] as f64);
                a[s] = a[s] / n;
                b[s] = b[s] / n;
            }
            let mut dx = vec![T::zero(); x.len()];
            lay.visit(x.len(), |i, s, k| {
                let xhat = (x[i] - self.mean[s]) * self.rstd[s];
                dx[i] = self.rstd[s] * (g[i] * gamma[k] - a[s] - xhat * b[s]);
            });
            dx
        });
        vec![dx, needs[1].then_some(dgamma), needs[2].then_some(dbeta)]
    }
    any_impl!();
}

impl<T: Scalar> Graph<T> {
    fn norm_common(&mut self, x: Var, gamma: Var, beta: Var, layout: Layout, eps: T) -> Result<Var> {
        let (y, mean, rstd) = forward(
            &layout,
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            eps,
        );
        let out = Tensor::new(self.shape(x).to_vec(), y)?;
        Ok(self.push(out, vec![x, gamma, beta], Norm { layout, mean, rstd }))
    }

    /// Normalizes over the last axis with affine `gamma, beta` of that width.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let d = *self.shape(x).last().unwrap();
        for p in [gamma, beta] {
            if self.shape(p) != [d] {
                bail!(Dimension, "layer_norm: affine {:?} for width {d}", self.shape(p));
            }
        }
        let layout = Layout { c: d, groups: 1, kind: Kind::LayerNorm, l: 1 };
        self.norm_common(x, gamma, beta, layout, eps)
    }

    /// Group normalization of a `[W, H, L, C]` map.
    ///
    /// With `per_band` every spectral location gets its own statistics and its
    /// own affine row (`gamma, beta: [L, C]`); otherwise statistics pool all
    /// bands and the affine is shared (`[C]`).
    pub fn group_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        eps: T,
        per_band: bool,
    ) -> Result<Var> {
        let [_, _, l, c] = dims4(self.shape(x), "group_norm")?;
        if groups == 0 || c % groups != 0 {
            bail!(Config, "group_norm: {groups} groups do not divide {c} channels");
        }
        let affine: Vec<usize> = if per_band { vec![l, c] } else { vec![c] };
        for p in [gamma, beta] {
            if self.shape(p) != affine.as_slice() {
                bail!(Dimension, "group_norm: affine {:?}, expected {:?}", self.shape(p), affine);
            }
        }
        let kind = if per_band { Kind::GroupPerBand } else { Kind::GroupShared };
        let layout = Layout { c, groups, kind, l };
        self.norm_common(x, gamma, beta, layout, eps)
    }
}
