//! The u-shaped network: four encoder levels of band-wise convolutions,
//! spectral normalization and spectral transformers, a volumetric decoder
//! with skip connections, and a band-averaged probability map.

use rand::Rng;

use super::config::{ModelConfig, Stage};
use super::params::{Bound, ParamStore};
use super::transformer::{init_transformer, normal, spectral_transformer, TransformerShape};
use crate::autodiff::{AttentionKind, AttentionProbs, BandFilters, Graph, Var};
use crate::data::Mask;
use crate::error::{bail, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Test hooks for the forward pass.
#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardOptions {
    /// Replace the skip tensor of encoder level `i + 1` with zeros.
    pub drop_skip: [bool; 3],
}

/// Graph nodes produced by [`SpecTr::forward`].
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `[W, H]` in `[0, 1]`.
    pub prob_map: Var,
    /// `[W, H, L]` per-band probabilities.
    pub band_probs: Var,
    /// Attention nodes of the enabled stages.
    pub attention: Vec<(Stage, Var)>,
    /// Output `[W', H', L', C]` of each encoder level before pooling.
    pub encoder_shapes: Vec<Vec<usize>>,
}

/// Spatially averaged attention of one stage.
#[derive(Clone, Debug)]
pub struct AttentionSummary<T> {
    pub stage: Stage,
    pub heads: usize,
    pub seq_len: usize,
    /// `[heads, L', L']`.
    pub mean: Vec<T>,
    pub alphas: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct SpecTr<T: Scalar> {
    config: ModelConfig,
    params: ParamStore<T>,
}

fn conv_name(level: usize, round: usize) -> String {
    format!("enc{level}.conv{round}")
}

impl<T: Scalar> SpecTr<T> {
    pub fn new<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut p = ParamStore::new();
        let g = config.norm_groups;
        let mut cin = 1;
        for level in 1..=config.levels {
            let c = config.channels(level);
            let l = config.spectral_extent(level);
            for round in 1..=2 {
                let name = conv_name(level, round);
                let kshape: Vec<usize> = match (config.depthwise_encoder, config.share_band_filters) {
                    (true, true) => vec![c, cin, 3, 3],
                    (true, false) => vec![l, c, cin, 3, 3],
                    (false, _) => vec![c, cin, 3, 3, 3],
                };
                let fan_in = cin * kshape[kshape.len() - 2..].iter().product::<usize>()
                    * if config.depthwise_encoder { 1 } else { 3 };
                p.insert(format!("{name}.weight"), normal(&kshape, (2.0 / fan_in as f64).sqrt(), rng))?;
                p.insert(format!("{name}.bias"), Tensor::zeros(&[c]))?;
                let affine: Vec<usize> = if config.sn_enabled { vec![l, c] } else { vec![c] };
                p.insert(format!("enc{level}.norm{round}.gamma"), Tensor::full(&affine, T::one()))?;
                p.insert(format!("enc{level}.norm{round}.beta"), Tensor::zeros(&affine))?;
                if c % g != 0 {
                    bail!(Config, "{g} groups do not divide {c} channels");
                }
                cin = c;
            }
            if config.has_transformer(level) {
                let shape = Self::transformer_shape(&config, level);
                init_transformer(&mut p, &format!("enc{level}.tf"), &shape, rng)?;
            }
        }
        for level in (1..config.levels).rev() {
            let c = config.channels(level);
            let mut cin = config.channels(level + 1) + c;
            for round in 1..=2 {
                let name = format!("dec{level}.conv{round}");
                let fan_in = cin * 27;
                p.insert(format!("{name}.weight"), normal(&[c, cin, 3, 3, 3], (2.0 / fan_in as f64).sqrt(), rng))?;
                p.insert(format!("{name}.bias"), Tensor::zeros(&[c]))?;
                p.insert(format!("dec{level}.norm{round}.gamma"), Tensor::full(&[c], T::one()))?;
                p.insert(format!("dec{level}.norm{round}.beta"), Tensor::zeros(&[c]))?;
                cin = c;
            }
        }
        let c1 = config.channels(1);
        p.insert("head.weight", normal(&[c1, 1], (1.0 / c1 as f64).sqrt(), rng))?;
        p.insert("head.bias", Tensor::zeros(&[1]))?;
        Ok(Self { config, params: p })
    }

    /// Rebuilds a model around existing parameters, checking that every
    /// tensor the configuration needs is present with the right shape.
    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        use rand::SeedableRng;
        let reference = SpecTr::<T>::new(config.clone(), &mut rand_chacha::ChaCha8Rng::seed_from_u64(0))?;
        if reference.params.names() != params.names() {
            bail!(Config, "parameter set does not match the model configuration");
        }
        for ((name, a), (_, b)) in reference.params.iter().zip(params.iter()) {
            if a.shape() != b.shape() {
                bail!(Config, "parameter {name}: shape {:?}, expected {:?}", b.shape(), a.shape());
            }
        }
        Ok(Self { config, params })
    }

    pub(crate) fn transformer_shape(config: &ModelConfig, level: usize) -> TransformerShape {
        let c = config.channels(level);
        TransformerShape {
            channels: c,
            d_model: c,
            heads: config.heads,
            seq_len: config.spectral_extent(level),
            mlp_hidden: config.mlp_ratio * c,
            kind: if config.sparsity_enabled { AttentionKind::Entmax } else { AttentionKind::Softmax },
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    /// Checks an input map `[W, H, L, 1]` against the model.
    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let &[w, h, l, 1] = shape else {
            bail!(Input, "expected a [W, H, L, 1] cube, got {:?}", shape);
        };
        if w % 8 != 0 || h % 8 != 0 {
            bail!(Input, "spatial size {w}x{h} must be divisible by 8");
        }
        if l != self.config.bands {
            bail!(Input, "cube has {l} bands, model expects {}", self.config.bands);
        }
        if l < 8 {
            bail!(Input, "at least 8 bands are required, got {l}");
        }
        Ok(())
    }

    fn conv_norm_relu(&self, g: &mut Graph<T>, b: &Bound<'_, T>, x: Var, level: usize, round: usize) -> Result<Var> {
        let cfg = &self.config;
        let name = conv_name(level, round);
        let (k, bias) = (b.var(&format!("{name}.weight"))?, b.var(&format!("{name}.bias"))?);
        let y = if cfg.depthwise_encoder {
            let mode = if cfg.share_band_filters { BandFilters::Shared } else { BandFilters::PerBand };
            g.band_conv2d(x, k, bias, mode)?
        } else {
            g.conv3d(x, k, bias)?
        };
        let gamma = b.var(&format!("enc{level}.norm{round}.gamma"))?;
        let beta = b.var(&format!("enc{level}.norm{round}.beta"))?;
        let y = g.group_norm(y, gamma, beta, cfg.norm_groups, T::of(cfg.norm_eps), cfg.sn_enabled)?;
        Ok(g.relu(y))
    }

    /// One encoder level: two rounds of conv, normalization and ReLU, the
    /// optional spectral transformer, then 2x2x2 pooling (except at the last
    /// level). Returns `(skip, pooled, attention)`.
    pub fn encoder_stage(
        &self,
        g: &mut Graph<T>,
        b: &Bound<'_, T>,
        x: Var,
        level: usize,
    ) -> Result<(Var, Option<Var>, Option<Var>)> {
        if !(1..=self.config.levels).contains(&level) {
            bail!(Contract, "encoder level {level} out of range");
        }
        let mut y = self.conv_norm_relu(g, b, x, level, 1)?;
        y = self.conv_norm_relu(g, b, y, level, 2)?;
        let mut att = None;
        if self.config.has_transformer(level) {
            let shape = Self::transformer_shape(&self.config, level);
            let (out, a) = spectral_transformer(g, y, b, &format!("enc{level}.tf"), &shape)?;
            y = out;
            att = Some(a);
        }
        let pooled = if level < self.config.levels { Some(g.maxpool3(y)?) } else { None };
        Ok((y, pooled, att))
    }

    fn decoder_stage(&self, g: &mut Graph<T>, b: &Bound<'_, T>, x: Var, skip: Var, level: usize) -> Result<Var> {
        let s = g.shape(skip).to_vec();
        let up = g.upsample3_to(x, [s[0], s[1], s[2]])?;
        let mut y = g.concat_last(up, skip)?;
        for round in 1..=2 {
            let name = format!("dec{level}.conv{round}");
            y = g.conv3d(y, b.var(&format!("{name}.weight"))?, b.var(&format!("{name}.bias"))?)?;
            let gamma = b.var(&format!("dec{level}.norm{round}.gamma"))?;
            let beta = b.var(&format!("dec{level}.norm{round}.beta"))?;
            y = g.group_norm(y, gamma, beta, self.config.norm_groups, T::of(self.config.norm_eps), false)?;
            y = g.relu(y);
        }
        Ok(y)
    }

    /// Full forward pass on a `[W, H, L, 1]` cube.
    pub fn forward(&self, g: &mut Graph<T>, b: &Bound<'_, T>, cube: Var, opts: ForwardOptions) -> Result<ForwardOutput> {
        self.check_input(g.shape(cube))?;
        let mut x = cube;
        let mut skips = Vec::new();
        let mut attention = Vec::new();
        let mut encoder_shapes = Vec::new();
        for level in 1..=self.config.levels {
            let (skip, pooled, att) = self.encoder_stage(g, b, x, level)?;
            encoder_shapes.push(g.shape(skip).to_vec());
            if let (Some(a), Some(stage)) = (att, Stage::from_level(level)) {
                attention.push((stage, a));
            }
            skips.push(skip);
            if let Some(p) = pooled {
                x = p;
            }
        }
        let mut y = skips.pop().expect("four levels");
        for level in (1..self.config.levels).rev() {
            let mut skip = skips[level - 1];
            if opts.drop_skip[level - 1] {
                skip = g.input(Tensor::zeros(g.shape(skip)));
            }
            y = self.decoder_stage(g, b, y, skip, level)?;
        }
        let logits = g.linear(y, b.var("head.weight")?, Some(b.var("head.bias")?))?;
        let probs = g.sigmoid(logits);
        let s = g.shape(probs).to_vec();
        let band_probs = g.reshape(probs, &s[..3])?;
        let prob_map = g.mean_axis(band_probs, 2)?;
        Ok(ForwardOutput { prob_map, band_probs, attention, encoder_shapes })
    }

    /// Convenience inference: probability map `[W, H]` and attention
    /// summaries, without recording anything for differentiation.
    pub fn infer(&self, cube: &Tensor<T>) -> Result<(Tensor<T>, Vec<AttentionSummary<T>>)> {
        let mut g = Graph::new();
        let b = self.params.bind_frozen(&mut g);
        let x = g.input(cube.clone());
        let out = self.forward(&mut g, &b, x, ForwardOptions::default())?;
        let summaries = attention_summaries(&g, &out);
        Ok((g.value(out.prob_map).clone(), summaries))
    }
}

/// Per-stage attention averaged over spatial locations.
pub fn attention_summaries<T: Scalar>(g: &Graph<T>, out: &ForwardOutput) -> Vec<AttentionSummary<T>> {
    out.attention
        .iter()
        .filter_map(|&(stage, v)| {
            let p: &AttentionProbs<T> = g.attention_probs(v)?;
            Some(AttentionSummary {
                stage,
                heads: p.heads,
                seq_len: p.seq_len,
                mean: p.mean_over_sequences(),
                alphas: p.alphas.clone(),
            })
        })
        .collect()
}

/// Binary mask from a `[W, H]` probability map: 1 where `prob >= threshold`.
pub fn predict<T: Scalar>(prob_map: &Tensor<T>, threshold: T) -> Result<Mask> {
    if !(threshold > T::zero() && threshold < T::one()) {
        bail!(Domain, "threshold must lie in (0, 1), got {threshold}");
    }
    Mask::from_map(prob_map, threshold)
}
