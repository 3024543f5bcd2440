//! Spectral transformer segmentation of hyperspectral cubes.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`). Training uses
//! `f32`; gradient checks rerun the same code in `f64`. The aliases below name
//! the concrete instantiations.

pub mod autodiff;
pub mod data;
pub mod entmax;
pub mod error;
pub mod gradcheck;
pub mod model;
mod gemm;
pub mod parallel;
pub mod scalar;
pub mod spectral_norm;
pub mod tensor;
pub mod train;

pub use autodiff::{Graph, Var};
pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Graph32 = Graph<f32>;
pub type Graph64 = Graph<f64>;
