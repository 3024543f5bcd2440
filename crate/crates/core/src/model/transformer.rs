//! Spectral transformer: every spatial location's band sequence is a token
//! sequence; one pre-norm transformer block mixes information along the
//! spectral axis with sparse multi-head attention.
//!
//! All functions take batched sequences `[N * L', D]` (N spatial locations
//! of L' tokens each); weights are shared across locations.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::params::{Bound, ParamStore};
use crate::autodiff::{AttentionKind, Graph, Var};
use crate::error::{bail, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const LN_EPS: f64 = 1e-5;
pub const POS_STD: f64 = 0.02;

/// Shape of one stage's transformer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TransformerShape {
    /// Width of the incoming feature elements.
    pub channels: usize,
    /// Embedding width D.
    pub d_model: usize,
    pub heads: usize,
    pub seq_len: usize,
    pub mlp_hidden: usize,
    pub kind: AttentionKind,
}

pub(crate) fn normal<T: Scalar, R: Rng>(shape: &[usize], std: f64, rng: &mut R) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(shape, |_| T::of(dist.sample(rng)))
}

pub(crate) fn uniform<T: Scalar, R: Rng>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::of(rng.gen_range(-bound..=bound)))
}

fn linear_init<T: Scalar, R: Rng>(store: &mut ParamStore<T>, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Result<()> {
    store.insert(format!("{name}.weight"), uniform(&[fan_in, fan_out], 1.0 / (fan_in as f64).sqrt(), rng))?;
    store.insert(format!("{name}.bias"), Tensor::zeros(&[fan_out]))
}

/// Registers the parameters of one stage transformer under `prefix`.
pub fn init_transformer<T: Scalar, R: Rng>(
    store: &mut ParamStore<T>,
    prefix: &str,
    shape: &TransformerShape,
    rng: &mut R,
) -> Result<()> {
    let TransformerShape { channels: c, d_model: d, heads, seq_len, mlp_hidden, kind } = *shape;
    if d % heads != 0 {
        bail!(Config, "{prefix}: width {d} not divisible by {heads} heads");
    }
    store.insert(format!("{prefix}.embed"), uniform(&[c, d], 1.0 / (c as f64).sqrt(), rng))?;
    store.insert(format!("{prefix}.pos"), normal(&[seq_len, d], POS_STD, rng))?;
    for ln in ["ln1", "ln2"] {
        store.insert(format!("{prefix}.{ln}.gamma"), Tensor::full(&[d], T::one()))?;
        store.insert(format!("{prefix}.{ln}.beta"), Tensor::zeros(&[d]))?;
    }
    linear_init(store, &format!("{prefix}.qkv"), d, 3 * d, rng)?;
    linear_init(store, &format!("{prefix}.out"), d, d, rng)?;
    linear_init(store, &format!("{prefix}.mlp1"), d, mlp_hidden, rng)?;
    linear_init(store, &format!("{prefix}.mlp2"), mlp_hidden, d, rng)?;
    linear_init(store, &format!("{prefix}.proj"), d, c, rng)?;
    if kind == AttentionKind::Entmax {
        store.insert(format!("{prefix}.alpha_raw"), uniform(&[heads], 1.0, rng))?;
    }
    Ok(())
}

/// `z0[n, s] = h[n, s] E + p[s]` for tokens `h: [N * L', C]`.
pub fn embed_sequence<T: Scalar>(g: &mut Graph<T>, features: Var, embed: Var, pos: Var) -> Result<Var> {
    let rows = g.shape(features)[0];
    let seq_len = g.shape(pos)[0];
    if rows % seq_len != 0 {
        bail!(Dimension, "embed_sequence: {rows} tokens are not whole sequences of {seq_len}");
    }
    let z = g.linear(features, embed, None)?;
    g.add_tiled(z, pos)
}

/// Multi-head self-attention on `[N * L', D]`. Returns the mixed output and
/// the attention node (see [`Graph::attention_probs`]).
pub fn msa_sparse<T: Scalar>(
    g: &mut Graph<T>,
    seq: Var,
    b: &Bound<'_, T>,
    prefix: &str,
    shape: &TransformerShape,
) -> Result<(Var, Var)> {
    let qkv = g.linear(seq, b.var(&format!("{prefix}.qkv.weight"))?, Some(b.var(&format!("{prefix}.qkv.bias"))?))?;
    let alpha = match shape.kind {
        AttentionKind::Entmax => Some(b.var(&format!("{prefix}.alpha_raw"))?),
        AttentionKind::Softmax => None,
    };
    let att = g.attention(qkv, alpha, shape.heads, shape.seq_len, shape.kind)?;
    let out = g.linear(att, b.var(&format!("{prefix}.out.weight"))?, Some(b.var(&format!("{prefix}.out.bias"))?))?;
    Ok((out, att))
}

/// `z1' = MSA(LN(z0)) + z0`, `z1 = MLP(LN(z1')) + z1'`.
pub fn transformer_block<T: Scalar>(
    g: &mut Graph<T>,
    z0: Var,
    b: &Bound<'_, T>,
    prefix: &str,
    shape: &TransformerShape,
) -> Result<(Var, Var)> {
    let eps = T::of(LN_EPS);
    let p = |n: &str| b.var(&format!("{prefix}.{n}"));
    let n1 = g.layer_norm(z0, p("ln1.gamma")?, p("ln1.beta")?, eps)?;
    let (a, att) = msa_sparse(g, n1, b, prefix, shape)?;
    let z1p = g.add(a, z0)?;
    let n2 = g.layer_norm(z1p, p("ln2.gamma")?, p("ln2.beta")?, eps)?;
    let h = g.linear(n2, p("mlp1.weight")?, Some(p("mlp1.bias")?))?;
    let h = g.relu(h);
    let m = g.linear(h, p("mlp2.weight")?, Some(p("mlp2.bias")?))?;
    Ok((g.add(m, z1p)?, att))
}

/// Embeds a `[W, H, L', C]` map location-wise, runs the block, projects back
/// to `C` channels and adds the result to the map.
pub fn spectral_transformer<T: Scalar>(
    g: &mut Graph<T>,
    f: Var,
    b: &Bound<'_, T>,
    prefix: &str,
    shape: &TransformerShape,
) -> Result<(Var, Var)> {
    let dims = g.shape(f).to_vec();
    let c = dims[3];
    let tokens = g.reshape(f, &[dims.iter().product::<usize>() / c, c])?;
    let p = |n: &str| b.var(&format!("{prefix}.{n}"));
    let z0 = embed_sequence(g, tokens, p("embed")?, p("pos")?)?;
    let (z1, att) = transformer_block(g, z0, b, prefix, shape)?;
    let back = g.linear(z1, p("proj.weight")?, Some(p("proj.bias")?))?;
    let back = g.reshape(back, &dims)?;
    Ok((g.add(f, back)?, att))
}
