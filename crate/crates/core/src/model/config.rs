use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

/// Encoder resolution levels that may carry a spectral transformer. The first
/// level never does.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    E2,
    E3,
    E4,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::E2, Stage::E3, Stage::E4];

    /// Encoder level (1-based).
    pub fn level(self) -> usize {
        match self {
            Stage::E2 => 2,
            Stage::E3 => 3,
            Stage::E4 => 4,
        }
    }

    pub fn from_level(level: usize) -> Option<Stage> {
        match level {
            2 => Some(Stage::E2),
            3 => Some(Stage::E3),
            4 => Some(Stage::E4),
            _ => None,
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "E{}", self.level())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Spectral bands of the input cube.
    pub bands: usize,
    pub base_channels: usize,
    pub levels: usize,
    pub heads: usize,
    /// MLP hidden width as a multiple of the embedding width.
    pub mlp_ratio: usize,
    pub transformer_stages: Vec<Stage>,
    pub sparsity_enabled: bool,
    pub sn_enabled: bool,
    /// Band-wise 2-D convolutions in the encoder; `false` uses 3x3x3 ones.
    pub depthwise_encoder: bool,
    pub share_band_filters: bool,
    pub norm_groups: usize,
    pub norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            bands: 30,
            base_channels: 16,
            levels: 4,
            heads: 8,
            mlp_ratio: 4,
            transformer_stages: Stage::ALL.to_vec(),
            sparsity_enabled: true,
            sn_enabled: true,
            depthwise_encoder: true,
            share_band_filters: true,
            norm_groups: 4,
            norm_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels != 4 {
            bail!(Config, "the network has 4 resolution levels, got {}", self.levels);
        }
        if self.bands == 0 || self.base_channels == 0 || self.heads == 0 || self.mlp_ratio == 0 {
            bail!(Config, "bands, base_channels, heads and mlp_ratio must be positive");
        }
        if self.norm_groups == 0 || self.base_channels % self.norm_groups != 0 {
            bail!(Config, "{} norm groups do not divide {} channels", self.norm_groups, self.base_channels);
        }
        if !(self.norm_eps > 0.0) {
            bail!(Config, "norm_eps must be positive");
        }
        for s in &self.transformer_stages {
            let d = self.channels(s.level());
            if d % self.heads != 0 {
                bail!(Config, "{s}: embedding width {d} is not divisible by {} heads", self.heads);
            }
        }
        let mut seen = self.transformer_stages.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.transformer_stages.len() {
            bail!(Config, "duplicate transformer stage");
        }
        Ok(())
    }

    /// Channel width of an encoder level (1-based).
    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << (level - 1)
    }

    /// Spectral extent at an encoder level, halving (ceil) per level.
    pub fn spectral_extent(&self, level: usize) -> usize {
        (1..level).fold(self.bands, |l, _| crate::autodiff::pooled(l))
    }

    pub fn has_transformer(&self, level: usize) -> bool {
        Stage::from_level(level).is_some_and(|s| self.transformer_stages.contains(&s))
    }
}
