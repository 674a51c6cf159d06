//! Floating-point abstraction shared by every numeric kernel in the toolkit.
//!
//! All matrix code is written against [`Scalar`], which is implemented for
//! `f32` and `f64`. The trait bundles the `num_traits` bounds the kernels
//! need, the handful of special functions `num_traits::Float` lacks (`erf`),
//! precision-dependent tolerances, and a dispatch hook into the blocked GEMM
//! kernels of `matrixmultiply`.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

pub trait Scalar:
    'static
    + Copy
    + Send
    + Sync
    + Float
    + FloatConst
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + Default
    + Sum
    + Debug
    + Display
    + LowerExp
{
    /// Short dtype tag used by the interchange formats.
    const DTYPE: &'static str;

    /// Largest deviation of `QᵀQ` from the identity accepted for an orthonormal basis.
    fn orthonormal_tol() -> Self;

    /// Relative off-diagonal threshold below which a Jacobi rotation is skipped.
    fn jacobi_tol() -> Self;

    /// Largest overshoot of a cosine above 1 that is silently clamped.
    fn clamp_tol() -> Self;

    fn erf(self) -> Self;

    /// Converts an `f64` constant. Panics only for values that cannot be
    /// represented at all, which never happens for finite literals.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("finite literal")
    }

    #[inline]
    fn of_usize(v: usize) -> Self {
        Self::from_usize(v).expect("usize fits in float")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("float converts to f64")
    }

    /// `C ← alpha·A·B + beta·C` over strided storage.
    ///
    /// # Safety
    /// Every pointer/stride combination must address valid memory for the
    /// given `m×k`, `k×n` and `m×n` extents, and `c` must not alias `a` or `b`.
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
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";

    fn orthonormal_tol() -> Self {
        1e-8
    }

    fn jacobi_tol() -> Self {
        1e-12
    }

    fn clamp_tol() -> Self {
        1e-6
    }

    fn erf(self) -> Self {
        libm::erf(self)
    }

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
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";

    fn orthonormal_tol() -> Self {
        1e-4
    }

    fn jacobi_tol() -> Self {
        // a few ulps; 1e-12 is unreachable in single precision
        5e-7
    }

    fn clamp_tol() -> Self {
        1e-4
    }

    fn erf(self) -> Self {
        libm::erff(self)
    }

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
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn erf_matches_known_values() {
        assert_eq!(Scalar::erf(0.0f64), 0.0);
        assert!((Scalar::erf(1.0f64) - 0.842_700_792_949_714_9).abs() < 1e-15);
        assert!((Scalar::erf(1.0f32) - 0.842_700_8).abs() < 1e-6);
    }

    #[test]
    fn literal_conversion() {
        assert_eq!(f32::lit(0.5), 0.5f32);
        assert_eq!(f64::of_usize(7), 7.0);
    }
}
