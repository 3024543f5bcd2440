//! The eight-row design ablation: encoder convolution type, transformer
//! stages, sparse attention and spectral normalization.

use sha2::{Digest, Sha256};

use super::trainer::{evaluate, TrainConfig, Trainer};
use crate::data::Sample;
use crate::error::Result;
use crate::model::{ModelConfig, Stage};

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub depthwise: bool,
    pub stages: Vec<Stage>,
    pub sparsity: bool,
    pub sn: bool,
    /// Published mean DSC (%) of this variant, for context only.
    pub reference_dsc: f64,
}

impl AblationRow {
    pub fn label(&self) -> String {
        let mut parts = vec![if self.depthwise { "dw" } else { "conv3d" }.to_string()];
        let stages: Vec<String> = self.stages.iter().map(Stage::to_string).collect();
        parts.push(if stages.is_empty() { "no-tf".into() } else { stages.join("+") });
        if !self.stages.is_empty() {
            parts.push(if self.sparsity { "entmax" } else { "softmax" }.into());
        }
        parts.push(if self.sn { "sn" } else { "gn" }.into());
        parts.join("/")
    }

    pub fn apply(&self, base: &ModelConfig) -> ModelConfig {
        ModelConfig {
            depthwise_encoder: self.depthwise,
            transformer_stages: self.stages.clone(),
            sparsity_enabled: self.sparsity,
            sn_enabled: self.sn,
            ..base.clone()
        }
    }
}

/// The eight published variants, full model first and conv-only last.
pub fn ablation_rows() -> Vec<AblationRow> {
    use Stage::*;
    let row = |depthwise, stages: &[Stage], sparsity, sn, reference_dsc| AblationRow {
        depthwise,
        stages: stages.to_vec(),
        sparsity,
        sn,
        reference_dsc,
    };
    vec![
        row(true, &[E2, E3, E4], true, true, 75.21),
        row(false, &[E2, E3, E4], true, true, 72.79),
        row(true, &[E4], true, true, 72.17),
        row(true, &[E3], true, true, 72.39),
        row(true, &[E2], true, true, 73.21),
        row(true, &[E2, E3, E4], true, false, 70.66),
        row(true, &[E2, E3, E4], false, true, 73.28),
        row(true, &[], false, false, 70.40),
    ]
}

/// First 16 hex digits of the SHA-256 of the config's JSON form.
pub fn config_hash(cfg: &ModelConfig) -> String {
    let json = serde_json::to_vec(cfg).expect("config serializes");
    Sha256::digest(&json).iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationResult {
    pub row: AblationRow,
    pub config_hash: String,
    pub params: usize,
    pub final_loss: f64,
    pub dsc: f64,
}

/// Trains and evaluates every row with the same data and schedule.
pub fn ablate(
    rows: &[AblationRow],
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    train: &[Sample],
    test: &[Sample],
    mut progress: impl FnMut(usize, &AblationRow),
) -> Result<Vec<AblationResult>> {
    let mut out = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        progress(i, row);
        let cfg = row.apply(base);
        let eval_free = TrainConfig { eval_every: 0, ..train_cfg.clone() };
        let mut trainer = Trainer::new(cfg.clone(), eval_free)?;
        trainer.fit(train, &[], |_| {})?;
        let report = evaluate(trainer.model(), test, train_cfg.threshold)?;
        out.push(AblationResult {
            row: row.clone(),
            config_hash: config_hash(&cfg),
            params: trainer.model().param_count(),
            final_loss: trainer.history().last().map_or(f64::NAN, |l| l.mean_loss),
            dsc: report.mean_dsc(),
        });
    }
    Ok(out)
}

/// `row,label,depthwise,e2,e3,e4,sparsity,sn,params,config_hash,final_loss,dsc,reference_dsc`
/// with DSC as a percentage.
pub fn ablation_csv(results: &[AblationResult]) -> String {
    let mut s = String::from("row,label,depthwise,e2,e3,e4,sparsity,sn,params,config_hash,final_loss,dsc,reference_dsc\n");
    let b = |v: bool| u8::from(v);
    for (i, r) in results.iter().enumerate() {
        let has = |st: Stage| b(r.row.stages.contains(&st));
        s += &format!(
            "{},{},{},{},{},{},{},{},{},{},{},{:.2},{:.2}\n",
            i + 1,
            r.row.label(),
            b(r.row.depthwise),
            has(Stage::E2),
            has(Stage::E3),
            has(Stage::E4),
            b(r.row.sparsity),
            b(r.row.sn),
            r.params,
            r.config_hash,
            r.final_loss,
            100.0 * r.dsc,
            r.row.reference_dsc
        );
    }
    s
}
