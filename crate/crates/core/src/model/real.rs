//! Scalar abstraction so the same network runs in f32 (training) and f64
//! (gradient checks).

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::AddAssign;

use num_traits::Float;

pub trait Real: Float + AddAssign + Sum + Default + Debug + Send + Sync + 'static {
    /// # Safety
    /// Pointers and strides must describe in-bounds matrices of the given shapes.
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

    fn lit(x: f64) -> Self;
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

    fn lit(x: f64) -> f32 {
        x as f32
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

    fn lit(x: f64) -> f64 {
        x
    }
}

/// A strided matrix window into a flat buffer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct View {
    pub off: usize,
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl View {
    /// Row-major `rows x cols` starting at 0.
    pub fn dense(rows: usize, cols: usize) -> View {
        View { off: 0, rows, cols, rs: cols, cs: 1 }
    }

    /// Row-major block at `off` with leading dimension `ld`.
    pub fn block(off: usize, rows: usize, cols: usize, ld: usize) -> View {
        View { off, rows, cols, rs: ld, cs: 1 }
    }

    pub fn t(self) -> View {
        View { rows: self.cols, cols: self.rows, rs: self.cs, cs: self.rs, ..self }
    }

    fn fits(&self, len: usize) -> bool {
        self.rows == 0 || self.cols == 0 || self.off + (self.rows - 1) * self.rs + (self.cols - 1) * self.cs < len
    }
}

/// `C = alpha * A B + beta * C` on views. Panics on shape or bounds mismatch.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(alpha: T, a: &[T], va: View, b: &[T], vb: View, beta: T, c: &mut [T], vc: View) {
    assert_eq!(va.cols, vb.rows, "inner dimensions");
    assert_eq!((va.rows, vb.cols), (vc.rows, vc.cols), "output shape");
    assert!(va.fits(a.len()) && vb.fits(b.len()) && vc.fits(c.len()), "view out of bounds");
    let (m, k, n) = (va.rows, va.cols, vb.cols);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let p = &mut c[vc.off + i * vc.rs + j * vc.cs];
                *p = if beta == T::zero() { T::zero() } else { *p * beta };
            }
        }
        return;
    }
    // SAFETY: every view was bounds-checked against its buffer above, and `c`
    // is a unique borrow so it cannot alias `a` or `b`.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr().add(va.off),
            va.rs as isize,
            va.cs as isize,
            b.as_ptr().add(vb.off),
            vb.rs as isize,
            vb.cs as isize,
            beta,
            c.as_mut_ptr().add(vc.off),
            vc.rs as isize,
            vc.cs as isize,
        )
    }
}

/// Dense row-major product: `C(m x n) (+)= op(A) op(B)`.
#[allow(clippy::too_many_arguments)]
pub fn matmul<T: Real>(
    a: &[T],
    a_rows: usize,
    a_cols: usize,
    ta: bool,
    b: &[T],
    b_rows: usize,
    b_cols: usize,
    tb: bool,
    c: &mut [T],
    accumulate: bool,
) {
    let va = if ta { View::dense(a_rows, a_cols).t() } else { View::dense(a_rows, a_cols) };
    let vb = if tb { View::dense(b_rows, b_cols).t() } else { View::dense(b_rows, b_cols) };
    let vc = View::dense(va.rows, vb.cols);
    let beta = if accumulate { T::one() } else { T::zero() };
    gemm(T::one(), a, va, b, vb, beta, c, vc);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0]; // 3x2
        let mut c = [0.0f64; 4];
        matmul(&a, 2, 3, false, &b, 3, 2, false, &mut c, false);
        assert_eq!(c, [4.0, 5.0, 10.0, 11.0]);
        // A^T A is 3x3
        let mut d = [0.0f64; 9];
        matmul(&a, 2, 3, true, &a, 2, 3, false, &mut d, false);
        assert_eq!(d[0], 17.0);
        assert_eq!(d[4], 29.0);
        matmul(&a, 2, 3, true, &a, 2, 3, false, &mut d, true);
        assert_eq!(d[0], 34.0);
        let mut e = [0.0f32; 4];
        let af: Vec<f32> = a.iter().map(|&x| x as f32).collect();
        matmul(&af, 2, 3, false, &af, 2, 3, true, &mut e, false);
        assert_eq!(e, [14.0, 32.0, 32.0, 77.0]);
    }

    #[test]
    fn strided_blocks() {
        // columns 1..3 of a 2x4 matrix times identity
        let a = [0.0, 1.0, 2.0, 0.0, 0.0, 3.0, 4.0, 0.0];
        let id = [1.0, 0.0, 0.0, 1.0];
        let mut c = [0.0f64; 4];
        gemm(1.0, &a, View::block(1, 2, 2, 4), &id, View::dense(2, 2), 0.0, &mut c, View::dense(2, 2));
        assert_eq!(c, [1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn empty_inner_dimension_scales() {
        let mut c = [2.0f64; 4];
        gemm(1.0, &[], View::dense(2, 0), &[], View::dense(0, 2), 0.5, &mut c, View::dense(2, 2));
        assert_eq!(c, [1.0; 4]);
    }
}
