//! Dice + binary cross-entropy on the band-averaged probability map.

use std::any::Any;

use crate::autodiff::{any_impl, Backward, Graph, Var};
use crate::error::{bail, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const PROB_CLIP: f64 = 1e-6;
pub const DICE_SMOOTH: f64 = 1.0;

struct DiceBce;

fn clip<T: Scalar>(p: T) -> (T, bool) {
    let (lo, hi) = (T::of(PROB_CLIP), T::of(1.0 - PROB_CLIP));
    if p < lo {
        (lo, false)
    } else if p > hi {
        (hi, false)
    } else {
        (p, true)
    }
}

/// Returns `(loss, soft dice, bce)` for clipped probabilities.
fn terms<T: Scalar>(prob: &[T], mask: &[T]) -> (T, T, T) {
    let n = T::of(prob.len() as f64);
    let smooth = T::of(DICE_SMOOTH);
    let (mut inter, mut sp, mut sm, mut bce) = (T::zero(), T::zero(), T::zero(), T::zero());
    for (&p, &m) in prob.iter().zip(mask) {
        let (p, _) = clip(p);
        inter = inter + p * m;
        sp = sp + p;
        sm = sm + m;
        bce = bce - (m * p.ln() + (T::one() - m) * (T::one() - p).ln());
    }
    let dice = (T::of(2.0) * inter + smooth) / (sp + sm + smooth);
    let bce = bce / n;
    let half = T::of(0.5);
    (half * (T::one() - dice) + half * bce, dice, bce)
}

impl<T: Scalar> Backward<T> for DiceBce {
    fn name(&self) -> &'static str {
        "dice_bce_loss"
    }

    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let (prob, mask) = (x[0].data(), x[1].data());
        let n = T::of(prob.len() as f64);
        let smooth = T::of(DICE_SMOOTH);
        let (mut inter, mut sp, mut sm) = (T::zero(), T::zero(), T::zero());
        for (&p, &m) in prob.iter().zip(mask) {
            let (p, _) = clip(p);
            inter = inter + p * m;
            sp = sp + p;
            sm = sm + m;
        }
        let num = T::of(2.0) * inter + smooth;
        let den = sp + sm + smooth;
        let half = T::of(0.5);
        let dp = needs[0].then(|| {
            prob.iter()
                .zip(mask)
                .map(|(&p, &m)| {
                    let (p, inside) = clip(p);
                    if !inside {
                        return T::zero();
                    }
                    let ddice = (T::of(2.0) * m * den - num) / (den * den);
                    let dbce = -(m / p - (T::one() - m) / (T::one() - p)) / n;
                    g[0] * half * (dbce - ddice)
                })
                .collect()
        });
        vec![dp, None]
    }
    any_impl!();
}

impl<T: Scalar> Graph<T> {
    /// `0.5 (1 - softDice) + 0.5 BCE` with probabilities clipped to
    /// `[1e-6, 1 - 1e-6]` and Dice smoothing 1. The target gets no gradient.
    pub fn dice_bce_loss(&mut self, prob: Var, target: Var) -> Result<Var> {
        if self.shape(prob) != self.shape(target) {
            bail!(Dimension, "loss: prediction {:?} vs target {:?}", self.shape(prob), self.shape(target));
        }
        let (loss, _, _) = terms(self.value(prob).data(), self.value(target).data());
        Ok(self.push(Tensor::scalar(loss), vec![prob, target], DiceBce))
    }
}

/// Soft Dice and BCE terms of the loss, for reporting.
pub fn loss_terms<T: Scalar>(prob: &Tensor<T>, target: &Tensor<T>) -> Result<(T, T, T)> {
    if prob.shape() != target.shape() {
        bail!(Dimension, "loss: prediction {:?} vs target {:?}", prob.shape(), target.shape());
    }
    Ok(terms(prob.data(), target.data()))
}
