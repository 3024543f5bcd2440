//! α-entmax: a sparse alternative to softmax.
//!
//! For `1 < α <= 2`,
//!
//! ```text
//! entmax(x)_i = [(α-1) x_i - τ]_+ ^ (1/(α-1)),   τ such that Σ_i p_i = 1.
//! ```
//!
//! `α = 2` is sparsemax (Euclidean projection onto the simplex) and `α -> 1`
//! recovers softmax. Scores below the threshold get exactly zero mass.
//!
//! The threshold is found inside the bracket `[max z - 1, max z]`
//! (`z = (α-1) x`) where `Σp - 1` goes from `>= 0` to `-1`. Newton runs on
//! `(Σp)^(α-1)`, the q-norm of `(z - τ)_+`: it is convex and decreasing in
//! `τ` and exactly linear while one entry carries all the mass, so steps taken
//! from the left of the root never overshoot and usually converge in three or
//! four steps. Any step that leaves the bracket is replaced by a bisection
//! step. Iteration stops once `|Σp - 1| < 1e-9` or after
//! [`MAX_ITERS`] steps, and the result is renormalized.
//!
//! Gradients come from implicit differentiation of the threshold condition.
//! With `s_i = p_i^(2-α)` on the support (zero elsewhere),
//!
//! ```text
//! ∂p/∂x = diag(s) - s sᵀ / Σs
//! ∂p_i/∂α = (p_i - ŝ_i) / (α-1)² - (p_i ln p_i - ŝ_i H) / (α-1),
//! ```
//!
//! where `ŝ = s / Σs` and `H = Σ p_j ln p_j`. Both only need `p`.

use crate::autodiff::elementwise_logistic as logistic;
use crate::error::{bail, Result};
use crate::scalar::Scalar;

pub const MAX_ITERS: usize = 60;
pub const TOLERANCE: f64 = 1e-9;

/// Unconstrained per-head parameter mapped into `(1, 2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlphaParam<T> {
    pub raw: T,
}

impl<T: Scalar> AlphaParam<T> {
    pub fn new(raw: T) -> Self {
        Self { raw }
    }

    /// `1 + logistic(raw)`.
    pub fn alpha(&self) -> T {
        alpha_of_raw(self.raw)
    }

    /// Chains `∂L/∂α` to `∂L/∂raw`.
    pub fn raw_grad(&self, dalpha: T) -> T {
        let s = logistic(self.raw);
        dalpha * s * (T::one() - s)
    }
}

pub fn alpha_of_raw<T: Scalar>(raw: T) -> T {
    T::one() + logistic(raw)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntmaxResult<T> {
    pub p: Vec<T>,
    /// Threshold in the scaled domain: `p_i = [(α-1) x_i - τ]_+^(1/(α-1))`.
    pub tau: T,
    /// Indices with `p_i > 0`, ascending.
    pub support: Vec<usize>,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 1.0 && alpha <= 2.0) {
        bail!(Domain, "alpha must lie in (1, 2], got {alpha}");
    }
    Ok(())
}

pub fn entmax_forward<T: Scalar>(x: &[T], alpha: T) -> Result<EntmaxResult<T>> {
    if x.is_empty() {
        bail!(Domain, "entmax of an empty vector");
    }
    check_alpha(alpha.as_f64())?;
    if x.iter().any(|v| !v.is_finite()) {
        bail!(Domain, "entmax of non-finite scores");
    }
    let mut p = vec![T::zero(); x.len()];
    let tau = entmax_into(x, alpha.as_f64(), &mut p);
    let support = p.iter().enumerate().filter(|(_, &v)| v > T::zero()).map(|(i, _)| i).collect();
    Ok(EntmaxResult { p, tau: T::of(tau), support })
}

/// Solves for the threshold and writes probabilities into `out`. Returns τ.
/// Callers guarantee `1 < alpha <= 2` and finite, non-empty `x`.
pub(crate) fn entmax_into<T: Scalar>(x: &[T], alpha: f64, out: &mut [T]) -> f64 {
    debug_assert_eq!(x.len(), out.len());
    let am1 = alpha - 1.0;
    let q = 1.0 / am1;
    let zmax = x.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64() * am1));
    let (mut lo, mut hi) = (zmax - 1.0, zmax);
    // Newton on phi(tau) = ||(z - tau)_+||_q, which is convex, decreasing and
    // linear while the support is a single entry; iterates approach the root
    // from the left.
    let eval = |tau: f64| {
        let (mut f, mut df) = (0.0, 0.0);
        for v in x {
            let u = v.as_f64() * am1 - tau;
            if u > 0.0 {
                let um = if q == 1.0 { 1.0 } else { u.powf(q - 1.0) };
                f += u * um;
                df += um;
            }
        }
        (f, df)
    };
    let mut tau = lo;
    for _ in 0..MAX_ITERS {
        let (f, df) = eval(tau);
        let done = (f - 1.0).abs() < TOLERANCE;
        if f > 1.0 {
            lo = tau;
        } else {
            hi = tau;
        }
        let newton = if f > 0.0 && df > 0.0 {
            let phi = f.powf(am1);
            tau + (phi - 1.0) / phi * f / df
        } else {
            f64::NAN
        };
        if done {
            // one free polishing step: the result then no longer depends on
            // the path the iteration took
            if newton >= lo && newton <= hi {
                tau = newton;
            }
            break;
        }
        tau = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
    }
    let mut total = 0.0;
    for (o, v) in out.iter_mut().zip(x) {
        let u = v.as_f64() * am1 - tau;
        let pi = if u > 0.0 { u.powf(q) } else { 0.0 };
        total += pi;
        *o = T::of(pi);
    }
    let inv = 1.0 / total;
    out.iter_mut().for_each(|o| *o = T::of(o.as_f64() * inv));
    tau
}

/// Numerically stable softmax; the `α = 1` member of the family.
pub fn softmax_forward<T: Scalar>(x: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    softmax_into(x, &mut out);
    out
}

pub(crate) fn softmax_into<T: Scalar>(x: &[T], out: &mut [T]) {
    let m = x.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut total = T::zero();
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - m).exp();
        total = total + *o;
    }
    out.iter_mut().for_each(|o| *o = *o / total);
}

/// `Jᵀ g` for the softmax Jacobian `diag(p) - p pᵀ`.
pub(crate) fn softmax_vjp_into<T: Scalar>(p: &[T], g: &[T], out: &mut [T]) {
    let dot: T = p.iter().zip(g).map(|(&p, &g)| p * g).sum();
    for ((o, &p), &g) in out.iter_mut().zip(p).zip(g) {
        *o = p * (g - dot);
    }
}

/// `Jᵀ g` for the entmax Jacobian at `result`.
pub fn entmax_input_vjp<T: Scalar>(result: &EntmaxResult<T>, alpha: T, g: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); g.len()];
    entmax_vjp_into(&result.p, alpha.as_f64(), g, &mut out);
    out
}

pub(crate) fn entmax_vjp_into<T: Scalar>(p: &[T], alpha: f64, g: &[T], out: &mut [T]) {
    let expo = 2.0 - alpha;
    let (mut ssum, mut sg) = (0.0, 0.0);
    for (o, (&pi, &gi)) in out.iter_mut().zip(p.iter().zip(g)) {
        let pi = pi.as_f64();
        let s = if pi > 0.0 { pi.powf(expo) } else { 0.0 };
        ssum += s;
        sg += s * gi.as_f64();
        *o = T::of(s);
    }
    let c = sg / ssum;
    for (o, &gi) in out.iter_mut().zip(g) {
        let s = o.as_f64();
        *o = T::of(s * (gi.as_f64() - c));
    }
}

/// `Σ_i g_i ∂p_i/∂α` at the output `p`.
pub(crate) fn entmax_alpha_vjp<T: Scalar>(p: &[T], alpha: f64, g: &[T]) -> f64 {
    let q = 1.0 / (alpha - 1.0);
    let expo = 2.0 - alpha;
    let (mut ssum, mut ent) = (0.0, 0.0);
    for &pi in p {
        let pi = pi.as_f64();
        if pi > 0.0 {
            ssum += pi.powf(expo);
            ent += pi * pi.ln();
        }
    }
    let mut acc = 0.0;
    for (&pi, &gi) in p.iter().zip(g) {
        let pi = pi.as_f64();
        if pi > 0.0 {
            let sh = pi.powf(expo) / ssum;
            acc += gi.as_f64() * (q * q * (pi - sh) - q * (pi * pi.ln() - sh * ent));
        }
    }
    acc
}

/// Sensitivity of `entmax(x; α)` to `α`, contracted with the cotangent `g`.
///
/// At a point where the support is about to change the derivative is only
/// one-sided; the value returned is that of the current (interior) support.
pub fn entmax_alpha_grad<T: Scalar>(x: &[T], alpha: T, g: &[T]) -> Result<T> {
    if g.len() != x.len() {
        bail!(Dimension, "cotangent length {} for {} scores", g.len(), x.len());
    }
    if !(alpha.as_f64() < 2.0) {
        bail!(Domain, "alpha derivative needs alpha < 2, got {alpha}");
    }
    let res = entmax_forward(x, alpha)?;
    Ok(T::of(entmax_alpha_vjp(&res.p, alpha.as_f64(), g)))
}
