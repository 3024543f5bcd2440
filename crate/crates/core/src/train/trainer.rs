use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, TrainState};
use super::metrics::{ImageMetrics, MetricReport};
use super::optim::{cosine_lr, Adam, AdamConfig};
use crate::autodiff::Graph;
use crate::data::{augment, AugmentConfig, Sample};
use crate::error::{bail, Error, Result};
use crate::model::{predict, ForwardOptions, ModelConfig, SpecTr};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr0: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub threshold: f64,
    /// Evaluate on the test split every this many epochs (0 = never).
    pub eval_every: usize,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 3e-4,
            lr_min: 0.0,
            weight_decay: 5e-4,
            batch_size: 1,
            epochs: 20,
            seed: 0,
            threshold: 0.5,
            eval_every: 1,
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Schedule length of the original 75-epoch protocol.
    pub fn long_schedule() -> Self {
        Self { epochs: 75, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > self.lr_min && self.lr_min >= 0.0) {
            bail!(Config, "need lr0 > lr_min >= 0");
        }
        if self.epochs == 0 {
            bail!(Config, "epochs must be at least 1");
        }
        if self.batch_size != 1 {
            bail!(Config, "only batch_size 1 is supported");
        }
        if !(self.weight_decay >= 0.0) {
            bail!(Config, "weight_decay must be non-negative");
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            bail!(Config, "threshold must lie in (0, 1)");
        }
        for p in [self.augment.rotation_prob, self.augment.hflip_prob, self.augment.vflip_prob] {
            if !(0.0..=1.0).contains(&p) {
                bail!(Config, "augmentation probabilities must lie in [0, 1]");
            }
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig { weight_decay: self.weight_decay, ..AdamConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub mean_loss: f64,
    pub step_losses: Vec<f64>,
    pub lrs: Vec<f64>,
    pub test_dsc: Option<f64>,
}

/// Model forward + loss on one sample; returns the loss and, when `grad` is
/// set, leaves gradients in the parameter accumulators.
pub fn sample_loss(model: &mut SpecTr<f32>, sample: &Sample, grad: bool) -> Result<f64> {
    let mut g = Graph::new();
    let (loss, grads, vars) = {
        let b = if grad { model.params().bind(&mut g) } else { model.params().bind_frozen(&mut g) };
        let x = g.input(sample.cube.to_tensor());
        let out = model.forward(&mut g, &b, x, ForwardOptions::default())?;
        let target = g.input(sample.mask.to_tensor());
        let loss = g.dice_bce_loss(out.prob_map, target)?;
        let grads = if grad { Some(g.backward(loss)?) } else { None };
        (loss, grads, b.vars().to_vec())
    };
    let value = g.value(loss).data()[0] as f64;
    if let Some(grads) = grads {
        model.params_mut().zero_grads();
        model.params_mut().absorb_grads(&grads, &vars)?;
    }
    Ok(value)
}

/// Thresholded predictions against the ground truth, one task per image.
pub fn evaluate(model: &SpecTr<f32>, samples: &[Sample], threshold: f64) -> Result<MetricReport> {
    let images = samples
        .par_iter()
        .map(|s| {
            let (prob, _) = model.infer(&s.cube.to_tensor())?;
            let pred = predict(&prob, threshold as f32)?;
            ImageMetrics::compute(s.id, &pred, &s.mask)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport { images })
}

/// Mean loss over samples without augmentation or updates.
pub fn mean_loss(model: &mut SpecTr<f32>, samples: &[Sample]) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        total += sample_loss(model, s, false)?;
    }
    Ok(total / samples.len() as f64)
}

pub struct Trainer {
    current: Checkpoint,
    best: Option<Checkpoint>,
    config: TrainConfig,
    history: Vec<EpochLog>,
}

impl Trainer {
    pub fn new(model: ModelConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = SpecTr::new(model, &mut rng)?;
        let adam = Adam::new(config.adam(), model.params());
        let state = TrainState { seed: config.seed, ..TrainState::default() };
        Ok(Self { current: Checkpoint { model, adam: Some(adam), state }, best: None, config, history: Vec::new() })
    }

    /// Continues a run from a checkpoint saved by [`Trainer::checkpoint`].
    pub fn resume(checkpoint: Checkpoint, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if checkpoint.adam.is_none() {
            bail!(Input, "checkpoint carries no optimizer state");
        }
        if checkpoint.state.seed != config.seed {
            bail!(Config, "checkpoint seed {} differs from configured seed {}", checkpoint.state.seed, config.seed);
        }
        Ok(Self { current: checkpoint, best: None, config, history: Vec::new() })
    }

    pub fn model(&self) -> &SpecTr<f32> {
        &self.current.model
    }

    pub fn state(&self) -> &TrainState {
        &self.current.state
    }

    pub fn history(&self) -> &[EpochLog] {
        &self.history
    }

    /// Full state after the last completed epoch.
    pub fn checkpoint(&self) -> &Checkpoint {
        &self.current
    }

    /// State at the best test DSC seen in this session, or the current state
    /// when nothing was evaluated.
    pub fn best(&self) -> &Checkpoint {
        self.best.as_ref().unwrap_or(&self.current)
    }

    fn epoch_rng(&self, epoch: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(1 + epoch as u64);
        rng
    }

    /// One pass over `train` in a seeded order; evaluates on `test` when due.
    pub fn run_epoch(&mut self, train: &[Sample], test: &[Sample]) -> Result<EpochLog> {
        if train.is_empty() {
            bail!(Input, "empty training set");
        }
        let epoch = self.current.state.epoch;
        if epoch >= self.config.epochs {
            bail!(Contract, "all {} epochs already completed", self.config.epochs);
        }
        let total = self.config.epochs * train.len();
        let mut rng = self.epoch_rng(epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let (mut losses, mut lrs) = (Vec::new(), Vec::new());
        for &i in &order {
            let step = self.current.state.step;
            let (cube, mask) = augment(&train[i].cube, &train[i].mask, &self.config.augment, &mut rng);
            let sample = Sample { id: train[i].id, cube, mask };
            let loss = sample_loss(&mut self.current.model, &sample, true)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss at step {step} (sample {})", sample.id)));
            }
            let lr = cosine_lr(step, total, self.config.lr0, self.config.lr_min)?;
            let adam = self.current.adam.as_mut().expect("trainer holds optimizer state");
            adam.step(self.current.model.params_mut(), lr)
                .map_err(|e| Error::Numeric(format!("step {step}: {e}")))?;
            losses.push(loss);
            lrs.push(lr);
            self.current.state.step += 1;
        }
        self.current.state.epoch += 1;
        let done = self.current.state.epoch;
        let due = self.config.eval_every > 0 && (done % self.config.eval_every == 0 || done == self.config.epochs);
        let test_dsc = if due && !test.is_empty() {
            Some(evaluate(&self.current.model, test, self.config.threshold)?.mean_dsc())
        } else {
            None
        };
        if let Some(d) = test_dsc {
            if self.current.state.best_dsc.map_or(true, |b| d > b) {
                self.current.state.best_dsc = Some(d);
                self.current.state.best_epoch = Some(done);
                self.best = Some(self.current.clone());
            }
        }
        let log = EpochLog {
            epoch: done,
            mean_loss: losses.iter().sum::<f64>() / losses.len() as f64,
            step_losses: losses,
            lrs,
            test_dsc,
        };
        self.history.push(log.clone());
        Ok(log)
    }

    /// Runs the remaining epochs, reporting each one.
    pub fn fit(&mut self, train: &[Sample], test: &[Sample], mut progress: impl FnMut(&EpochLog)) -> Result<()> {
        while self.current.state.epoch < self.config.epochs {
            let log = self.run_epoch(train, test)?;
            progress(&log);
        }
        Ok(())
    }
}
