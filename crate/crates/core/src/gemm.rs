//! Bounds-checked front end to the strided GEMM kernels.

use crate::scalar::Scalar;

/// Strided 2-D view into a flat buffer: element `(i, j)` lives at
/// `offset + i * rs + j * cs`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct View {
    pub offset: usize,
    pub rs: usize,
    pub cs: usize,
}

impl View {
    pub fn row_major(offset: usize, cols: usize) -> Self {
        Self { offset, rs: cols, cs: 1 }
    }

    pub fn t(self) -> Self {
        Self { offset: self.offset, rs: self.cs, cs: self.rs }
    }

    fn last(&self, rows: usize, cols: usize) -> usize {
        self.offset + (rows - 1) * self.rs + (cols - 1) * self.cs
    }
}

/// `c <- alpha * a[m x k] * b[k x n] + beta * c[m x n]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    av: View,
    b: &[T],
    bv: View,
    beta: T,
    c: &mut [T],
    cv: View,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(cv.last(m, n) < c.len(), "gemm: C view out of bounds");
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let idx = cv.offset + i * cv.rs + j * cv.cs;
                c[idx] = if beta == T::zero() { T::zero() } else { beta * c[idx] };
            }
        }
        return;
    }
    assert!(av.last(m, k) < a.len(), "gemm: A view out of bounds");
    assert!(bv.last(k, n) < b.len(), "gemm: B view out of bounds");
    // SAFETY: every addressed element was bounds-checked above and `c` is a
    // unique borrow, so it cannot alias `a` or `b`.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr().add(av.offset),
            av.rs as isize,
            av.cs as isize,
            b.as_ptr().add(bv.offset),
            bv.rs as isize,
            bv.cs as isize,
            beta,
            c.as_mut_ptr().add(cv.offset),
            cv.rs as isize,
            cv.cs as isize,
        )
    }
}
