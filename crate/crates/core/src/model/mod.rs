mod config;
mod network;
mod params;
mod transformer;

pub use config::{ModelConfig, Stage};
pub use network::{attention_summaries, predict, AttentionSummary, ForwardOptions, ForwardOutput, SpecTr};
pub use params::{Bound, ParamStore};
pub use transformer::{
    embed_sequence, init_transformer, msa_sparse, spectral_transformer, transformer_block, TransformerShape,
};
