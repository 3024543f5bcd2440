use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::model::ParamStore;
use crate::scalar::Scalar;

/// `lr_min + (lr0 - lr_min) (1 + cos(π t / T)) / 2` for `0 <= t <= T`.
pub fn cosine_lr(t: usize, total: usize, lr0: f64, lr_min: f64) -> Result<f64> {
    if t > total {
        bail!(Contract, "step {t} beyond schedule length {total}");
    }
    if total == 0 {
        return Ok(lr0);
    }
    let c = (std::f64::consts::PI * t as f64 / total as f64).cos();
    Ok(lr_min + 0.5 * (lr0 - lr_min) * (1.0 + c))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 5e-4 }
    }
}

/// Adam with decoupled weight decay (`θ <- θ - lr wd θ` before the update).
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    /// Completed steps.
    pub t: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParamStore<T>) -> Self {
        let zeros = || params.tensors().iter().map(|t| vec![T::zero(); t.numel()]).collect();
        Self { config, t: 0, m: zeros(), v: zeros() }
    }

    /// Updates every parameter from its accumulated gradient. Fails without
    /// touching anything when a gradient is not finite.
    pub fn step(&mut self, params: &mut ParamStore<T>, lr: f64) -> Result<()> {
        for (name, p) in params.iter() {
            if let Some(g) = p.grad() {
                if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                    return Err(Error::Numeric(format!("non-finite gradient in {name} at element {i}")));
                }
            }
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, eps, weight_decay } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let (b1, b2) = (T::of(beta1), T::of(beta2));
        let (lr_t, decay, eps_t) = (T::of(lr / bc1), T::of(1.0 - lr * weight_decay), T::of(eps));
        let inv_bc2 = T::of(1.0 / bc2);
        for ((p, m), v) in params.tensors_mut().iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g = match p.grad() {
                Some(g) => g.to_vec(),
                None => vec![T::zero(); p.numel()],
            };
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(&g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                *w = *w * decay - lr_t * *mi / ((*vi * inv_bc2).sqrt() + eps_t);
            }
        }
        Ok(())
    }
}
