//! Scalar abstraction shared by every numeric routine in the crate.
//!
//! Training runs in `f32`; finite-difference oracles run the very same code
//! paths in `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumCast};

/// Floating point scalar: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + NumCast + Default + Debug + Display + Sum + Send + Sync + 'static
{
    /// Raw general matrix multiply `C <- alpha * A * B + beta * C` with
    /// arbitrary element strides.
    ///
    /// # Safety
    /// All pointers must be valid for every element addressed by the given
    /// extents and strides, and `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    /// Lossless-where-possible conversion from `f64`.
    fn of(x: f64) -> Self {
        <Self as NumCast>::from(x).expect("f64 is representable")
    }

    fn as_f64(self) -> f64 {
        <f64 as NumCast>::from(self).expect("scalar converts to f64")
    }

    fn as_f32(self) -> f32 {
        <f32 as NumCast>::from(self).expect("scalar converts to f32")
    }
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}
