//! Standard normal distribution functions.
//!
//! Both tails are evaluated through `erfc` (the FreeBSD/fdlibm rational
//! approximations, max error below one ulp), so the survival function keeps
//! full relative precision far into the upper tail instead of cancelling
//! against 1.

use std::f64::consts::FRAC_1_SQRT_2;

/// Φ(z) = P(Z ≤ z).
pub fn cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// 1 − Φ(z) = P(Z > z).
pub fn sf(z: f64) -> f64 {
    0.5 * libm::erfc(z * FRAC_1_SQRT_2)
}

/// Standard normal density.
pub fn pdf(z: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_about_zero() {
        assert_eq!(cdf(0.0), 0.5);
        for &z in &[0.1, 0.7, 1.5, 3.2, 5.0] {
            assert!((cdf(z) + cdf(-z) - 1.0).abs() < 1e-15);
            assert_eq!(sf(z), cdf(-z));
        }
    }

    #[test]
    fn upper_tail_keeps_relative_precision() {
        // 1 − Φ(10) ≈ 7.619853024160526e-24, far below f64 epsilon relative to 1.
        let tail = sf(10.0);
        assert!((tail / 7.619_853_024_160_526e-24 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn density_integrates_to_cdf_increment() {
        // Simpson on [−1, 1] against Φ(1) − Φ(−1).
        let n = 2000;
        let h = 2.0 / n as f64;
        let mut acc = pdf(-1.0) + pdf(1.0);
        for i in 1..n {
            let z = -1.0 + i as f64 * h;
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * pdf(z);
        }
        let simpson = acc * h / 3.0;
        assert!((simpson - (cdf(1.0) - cdf(-1.0))).abs() < 1e-12);
    }
}
