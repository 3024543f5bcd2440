//! Fused multi-head scaled dot-product attention with a softmax or α-entmax
//! normalizer, batched over independent sequences.

use std::any::Any;

use super::elementwise::any_impl;
use super::{Backward, Graph, Var};
use crate::entmax::{
    alpha_of_raw, entmax_alpha_vjp, entmax_into, entmax_vjp_into, softmax_into, softmax_vjp_into,
    AlphaParam,
};
use crate::error::{bail, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionKind {
    Softmax,
    /// α-entmax with one learnable α per head.
    Entmax,
}

/// Attention distributions saved by the forward pass.
#[derive(Clone, Debug)]
pub struct AttentionProbs<T> {
    pub sequences: usize,
    pub heads: usize,
    pub seq_len: usize,
    /// `[sequences, heads, seq_len, seq_len]`, rows are queries.
    pub probs: Vec<T>,
    /// α per head; `1` for softmax.
    pub alphas: Vec<T>,
}

impl<T: Scalar> AttentionProbs<T> {
    pub fn row(&self, seq: usize, head: usize, query: usize) -> &[T] {
        let l = self.seq_len;
        &self.probs[((seq * self.heads + head) * l + query) * l..][..l]
    }

    /// `[heads, seq_len, seq_len]` average over sequences (spatial locations).
    pub fn mean_over_sequences(&self) -> Vec<T> {
        let block = self.heads * self.seq_len * self.seq_len;
        let mut acc = vec![T::zero(); block];
        for chunk in self.probs.chunks(block) {
            acc.iter_mut().zip(chunk).for_each(|(a, &p)| *a = *a + p);
        }
        let inv = T::one() / T::of(self.sequences as f64);
        acc.iter_mut().for_each(|a| *a = *a * inv);
        acc
    }
}

struct Attention<T> {
    kind: AttentionKind,
    d_model: usize,
    raw_alpha: Vec<T>,
    saved: AttentionProbs<T>,
}

impl<T: Scalar> Attention<T> {
    fn dims(&self) -> (usize, usize, usize, usize) {
        (self.saved.sequences, self.saved.heads, self.saved.seq_len, self.d_model / self.saved.heads)
    }
}

impl<T: Scalar> Backward<T> for Attention<T> {
    fn name(&self) -> &'static str {
        "attention"
    }

    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let qkv = x[0].data();
        let (n, heads, l, d) = self.dims();
        let dm = self.d_model;
        let w = 3 * dm;
        let scale = T::one() / T::of(d as f64).sqrt();
        let mut dqkv = vec![T::zero(); qkv.len()];
        let mut dalpha = vec![0.0f64; heads];
        let mut dp = vec![T::zero(); l];
        let mut ds = vec![T::zero(); l];
        for s in 0..n {
            let base = s * l;
            for h in 0..heads {
                let (qo, ko, vo) = (h * d, dm + h * d, 2 * dm + h * d);
                for i in 0..l {
                    let p = self.saved.row(s, h, i);
                    let go = &g[(base + i) * dm + h * d..][..d];
                    for j in 0..l {
                        let v = &qkv[(base + j) * w + vo..][..d];
                        dp[j] = dot(go, v);
                        let dv = &mut dqkv[(base + j) * w + vo..][..d];
                        dv.iter_mut().zip(go).for_each(|(a, &b)| *a = *a + p[j] * b);
                    }
                    match self.kind {
                        AttentionKind::Softmax => softmax_vjp_into(p, &dp, &mut ds),
                        AttentionKind::Entmax => {
                            let alpha = self.saved.alphas[h].as_f64();
                            entmax_vjp_into(p, alpha, &dp, &mut ds);
                            dalpha[h] += entmax_alpha_vjp(p, alpha, &dp);
                        }
                    }
                    let qrow = (base + i) * w + qo;
                    for j in 0..l {
                        let c = ds[j] * scale;
                        if c == T::zero() {
                            continue;
                        }
                        let krow = (base + j) * w + ko;
                        for t in 0..d {
                            dqkv[qrow + t] = dqkv[qrow + t] + c * qkv[krow + t];
                            dqkv[krow + t] = dqkv[krow + t] + c * qkv[qrow + t];
                        }
                    }
                }
            }
        }
        let mut out = vec![needs[0].then_some(dqkv)];
        if self.kind == AttentionKind::Entmax {
            out.push(needs[1].then(|| {
                self.raw_alpha
                    .iter()
                    .zip(&dalpha)
                    .map(|(&raw, &da)| AlphaParam::new(raw).raw_grad(T::of(da)))
                    .collect()
            }));
        }
        out
    }
    any_impl!();
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

impl<T: Scalar> Graph<T> {
    /// Multi-head attention over `sequences` independent sequences of length
    /// `seq_len`.
    ///
    /// `qkv` is `[sequences * seq_len, 3 * D]` holding queries, keys and
    /// values side by side; head `h` uses columns `h*d..(h+1)*d` of each block
    /// with `d = D / heads`. Scores `q kᵀ / √d` are normalized row-wise by
    /// softmax or by α-entmax with `α_h = 1 + logistic(raw_alpha[h])`.
    /// Returns the `[sequences * seq_len, D]` concatenation of head outputs.
    pub fn attention(
        &mut self,
        qkv: Var,
        raw_alpha: Option<Var>,
        heads: usize,
        seq_len: usize,
        kind: AttentionKind,
    ) -> Result<Var> {
        let shape = self.shape(qkv).to_vec();
        let [rows, w] = shape[..] else {
            bail!(Dimension, "attention: qkv must be a matrix, got {:?}", shape);
        };
        if w % 3 != 0 || (w / 3) % heads != 0 || rows % seq_len != 0 {
            bail!(Dimension, "attention: qkv {:?} incompatible with {heads} heads, length {seq_len}", shape);
        }
        let raw: Vec<T> = match (kind, raw_alpha) {
            (AttentionKind::Entmax, Some(a)) if self.shape(a) == [heads] => self.value(a).data().to_vec(),
            (AttentionKind::Softmax, None) => Vec::new(),
            _ => bail!(Dimension, "attention: {:?} needs {} alpha parameters", kind, heads),
        };
        let dm = w / 3;
        let d = dm / heads;
        let n = rows / seq_len;
        let l = seq_len;
        let alphas: Vec<T> = match kind {
            AttentionKind::Softmax => vec![T::one(); heads],
            AttentionKind::Entmax => raw.iter().map(|&r| alpha_of_raw(r)).collect(),
        };
        if let Some(a) = alphas.iter().find(|a| !(a.as_f64() > 1.0 && a.as_f64() <= 2.0)) {
            if kind == AttentionKind::Entmax {
                bail!(Domain, "attention: alpha {a} left (1, 2]");
            }
        }
        let x = self.value(qkv).data();
        let scale = T::one() / T::of(d as f64).sqrt();
        let mut probs = vec![T::zero(); n * heads * l * l];
        let mut out = vec![T::zero(); rows * dm];
        let mut scores = vec![T::zero(); l];
        for s in 0..n {
            let base = s * l;
            for h in 0..heads {
                let (qo, ko, vo) = (h * d, dm + h * d, 2 * dm + h * d);
                for i in 0..l {
                    let q = &x[(base + i) * w + qo..][..d];
                    for j in 0..l {
                        scores[j] = dot(q, &x[(base + j) * w + ko..][..d]) * scale;
                    }
                    let p = &mut probs[((s * heads + h) * l + i) * l..][..l];
                    match kind {
                        AttentionKind::Softmax => softmax_into(&scores, p),
                        AttentionKind::Entmax => {
                            entmax_into(&scores, alphas[h].as_f64(), p);
                        }
                    }
                    let o = &mut out[(base + i) * dm + h * d..][..d];
                    for j in 0..l {
                        if p[j] == T::zero() {
                            continue;
                        }
                        let v = &x[(base + j) * w + vo..][..d];
                        o.iter_mut().zip(v).for_each(|(a, &b)| *a = *a + p[j] * b);
                    }
                }
            }
        }
        if let Some(pos) = out.iter().position(|v| !v.is_finite()) {
            bail!(Numeric, "attention produced a non-finite value at {pos}");
        }
        let saved = AttentionProbs { sequences: n, heads, seq_len: l, probs, alphas };
        let out = Tensor::new(vec![rows, dm], out)?;
        let mut inputs = vec![qkv];
        inputs.extend(raw_alpha);
        Ok(self.push_kept(out, inputs, Attention { kind, d_model: dm, raw_alpha: raw, saved }))
    }

    /// Attention distributions recorded by [`Graph::attention`] for `v`.
    pub fn attention_probs(&self, v: Var) -> Option<&AttentionProbs<T>> {
        self.op_state::<Attention<T>>(v).map(|a| &a.saved)
    }
}
