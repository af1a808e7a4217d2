//! Scalar abstraction and strided matrix products.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type of a model: `f32` for training, `f64` for
/// gradient checks.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + AddAssign + SubAssign + MulAssign + Sum + Default + Debug + Send + Sync + 'static
{
    /// `c = alpha * a·b + beta * c` on raw strided storage.
    ///
    /// # Safety
    /// Every addressed element must lie inside the allocations behind the
    /// pointers; `c` must not alias `a` or `b`.
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

    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("representable")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("representable")
    }

    /// Little-endian 32-bit encoding used by checkpoints.
    fn to_f32(self) -> f32 {
        ToPrimitive::to_f32(&self).expect("representable")
    }
}

impl Real for f32 {
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

impl Real for f64 {
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

/// Strided view of an `rows × cols` matrix starting at the slice origin.
#[derive(Clone, Copy, Debug)]
pub struct Mat<'a, T> {
    pub data: &'a [T],
    pub rs: usize,
    pub cs: usize,
}

impl<'a, T> Mat<'a, T> {
    /// Row-major with `cols` contiguous columns.
    pub fn rows(data: &'a [T], cols: usize) -> Self {
        Mat { data, rs: cols, cs: 1 }
    }

    /// Transposed view of a row-major matrix with `cols` columns.
    pub fn t(data: &'a [T], cols: usize) -> Self {
        Mat { data, rs: 1, cs: cols }
    }

    /// Row-major sub-block with leading dimension `ld`.
    pub fn strided(data: &'a [T], ld: usize) -> Self {
        Mat { data, rs: ld, cs: 1 }
    }

    /// Transposed row-major sub-block with leading dimension `ld`.
    pub fn strided_t(data: &'a [T], ld: usize) -> Self {
        Mat { data, rs: 1, cs: ld }
    }
}

fn span(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

/// `c[m×n] = alpha * a[m×k]·b[k×n] + beta * c`, where `c` is row-major
/// with leading dimension `ldc`. With `beta == 0` the prior contents of
/// `c` are ignored.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: Mat<'_, T>,
    b: Mat<'_, T>,
    beta: T,
    c: &mut [T],
    ldc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(span(m, k, a.rs, a.cs) <= a.data.len(), "lhs out of bounds");
    assert!(span(k, n, b.rs, b.cs) <= b.data.len(), "rhs out of bounds");
    assert!(span(m, n, ldc, 1) <= c.len(), "output out of bounds");
    // SAFETY: bounds checked above; `c` is a unique borrow so it cannot
    // alias the shared inputs.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        )
    }
}

/// `y = x·w` for row-major `x[rows×inner]`, `w[inner×out]`.
pub fn matmul<T: Real>(x: &[T], rows: usize, inner: usize, w: &[T], out: usize) -> Vec<T> {
    let mut y = vec![T::zero(); rows * out];
    gemm(rows, inner, out, T::one(), Mat::rows(x, inner), Mat::rows(w, out), T::zero(), &mut y, out);
    y
}

/// Backward of `y = x·w`: `dx += dy·wᵀ`, `dw += xᵀ·dy`.
#[allow(clippy::too_many_arguments)]
pub fn matmul_backward<T: Real>(
    x: &[T],
    rows: usize,
    inner: usize,
    w: &[T],
    out: usize,
    dy: &[T],
    dx: Option<&mut [T]>,
    dw: &mut [T],
) {
    if let Some(dx) = dx {
        gemm(rows, out, inner, T::one(), Mat::rows(dy, out), Mat::t(w, out), T::one(), dx, inner);
    }
    gemm(inner, rows, out, T::one(), Mat::t(x, inner), Mat::rows(dy, out), T::one(), dw, out);
}

pub fn add_assign<T: Real>(acc: &mut [T], x: &[T]) {
    for (a, &b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive_with_strides() {
        // a is 2x3, b is taken transposed from a 4x3 row-major block
        let a: Vec<f64> = (0..6).map(|i| i as f64).collect();
        let bt: Vec<f64> = (0..12).map(|i| (i as f64) * 0.5 - 2.0).collect();
        let mut c = vec![0.0; 8];
        gemm(2, 3, 4, 1.0, Mat::rows(&a, 3), Mat::t(&bt, 3), 0.0, &mut c, 4);
        for i in 0..2 {
            for j in 0..4 {
                let want: f64 = (0..3).map(|p| a[i * 3 + p] * bt[j * 3 + p]).sum();
                assert!((c[i * 4 + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_backward_accumulates() {
        let x = [1.0f64, 2.0];
        let w = [3.0f64, 4.0, 5.0, 6.0];
        let dy = [1.0f64, -1.0];
        let mut dx = [10.0, 10.0];
        let mut dw = [0.0; 4];
        matmul_backward(&x, 1, 2, &w, 2, &dy, Some(&mut dx), &mut dw);
        assert_eq!(dx, [10.0 - 1.0, 10.0 - 1.0]);
        assert_eq!(dw, [1.0, -1.0, 2.0, -2.0]);
    }
}
