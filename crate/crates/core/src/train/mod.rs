//! Loss, optimizer, metrics, the training loop, checkpoints, the design
//! ablation and attention reports.

mod ablation;
mod attention_report;
mod checkpoint;
mod loss;
mod metrics;
mod optim;
mod trainer;

pub use ablation::{ablate, ablation_csv, ablation_rows, config_hash, AblationResult, AblationRow};
pub use attention_report::{attention_report, heatmap_pgm, AttentionReport, HeadStats};
pub use checkpoint::{Checkpoint, TrainState};
pub use loss::{loss_terms, DICE_SMOOTH, PROB_CLIP};
pub use metrics::{boundary, dsc, hausdorff, iou, squared_distance_transform, ImageMetrics, MetricReport};
pub use optim::{cosine_lr, Adam, AdamConfig};
pub use trainer::{evaluate, mean_loss, sample_loss, EpochLog, TrainConfig, Trainer};
