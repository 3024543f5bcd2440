use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use spectr::data::PhantomConfig;
use spectr::model::ModelConfig;
use spectr::train::TrainConfig;

/// One JSON document with the model, training and phantom settings. Missing
/// sections and keys take their defaults; unknown keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub phantom: PhantomConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        // serde_json reports "... at line L column C"
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.phantom.validate()?;
        Ok(())
    }
}
