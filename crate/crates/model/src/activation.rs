use moegeom_core::Scalar;

/// Standard normal CDF.
#[inline]
pub fn normal_cdf<T: Scalar>(x: T) -> T {
    T::lit(0.5) * (T::one() + (x * T::FRAC_1_SQRT_2()).erf())
}

/// Exact GELU, `x·Φ(x)`.
#[inline]
pub fn gelu<T: Scalar>(x: T) -> T {
    x * normal_cdf(x)
}

/// Derivative of [`gelu`]: `Φ(x) + x·φ(x)`.
#[inline]
pub fn gelu_prime<T: Scalar>(x: T) -> T {
    let pdf = (-T::lit(0.5) * x * x).exp() * T::FRAC_2_SQRT_PI() * T::FRAC_1_SQRT_2() * T::lit(0.5);
    normal_cdf(x) + x * pdf
}
