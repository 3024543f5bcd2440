//! Spectral normalization: an independent group normalization, with its own
//! affine parameters, for every spectral location of a `[W, H, L, C]` map.
//!
//! Statistics for band `s` and channel group `g` are taken over the
//! `W * H * C/G` elements of that band and group only, so bands with very
//! different intensity distributions are normalized separately.

use crate::autodiff::{Graph, Var};
use crate::error::{bail, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_GROUPS: usize = 4;
pub const DEFAULT_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralNormParams<T> {
    /// `[L, C]`, one scale row per band.
    pub gamma: Tensor<T>,
    /// `[L, C]`, one shift row per band.
    pub beta: Tensor<T>,
    pub groups: usize,
    pub epsilon: T,
}

impl<T: Scalar> SpectralNormParams<T> {
    /// Identity affine (`gamma = 1`, `beta = 0`).
    pub fn new(bands: usize, channels: usize, groups: usize, epsilon: T) -> Result<Self> {
        if groups == 0 || channels % groups != 0 {
            bail!(Config, "{groups} groups do not divide {channels} channels");
        }
        Ok(Self {
            gamma: Tensor::full(&[bands, channels], T::one()),
            beta: Tensor::zeros(&[bands, channels]),
            groups,
            epsilon,
        })
    }
}

/// Differentiable spectral normalization of `f` inside a graph.
pub fn spectral_normalize_var<T: Scalar>(
    g: &mut Graph<T>,
    f: Var,
    gamma: Var,
    beta: Var,
    groups: usize,
    epsilon: T,
) -> Result<Var> {
    g.group_norm(f, gamma, beta, groups, epsilon, true)
}

/// Eager spectral normalization of a feature map.
pub fn spectral_normalize<T: Scalar>(f: &Tensor<T>, params: &SpectralNormParams<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let x = g.input(f.clone());
    let gamma = g.input(params.gamma.clone());
    let beta = g.input(params.beta.clone());
    let y = spectral_normalize_var(&mut g, x, gamma, beta, params.groups, params.epsilon)?;
    Ok(g.value(y).clone())
}
