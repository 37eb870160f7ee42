//! Scalar special functions used throughout: Gaussian log-densities and
//! log-CDFs, softplus, and log-sum-exp.

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

/// `ln(2π)`.
pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Log density of the standard normal at `x`.
#[inline]
pub fn log_phi(x: f64) -> f64 {
    -0.5 * x * x - 0.5 * LN_2PI
}

/// `ln Φ(x)` without cancellation in either tail.
pub fn log_normal_cdf(x: f64) -> f64 {
    if x < -35.0 {
        // Asymptotic expansion of the Mills ratio.
        let x2 = x * x;
        let inv = 1.0 / x2;
        let series = 1.0 - inv + 3.0 * inv * inv - 15.0 * inv.powi(3) + 105.0 * inv.powi(4);
        -0.5 * x2 - (-x).ln() - 0.5 * LN_2PI + series.ln()
    } else if x > 0.0 {
        (-0.5 * erfc(x / SQRT_2)).ln_1p()
    } else {
        (0.5 * erfc(-x / SQRT_2)).ln()
    }
}

/// `φ(x) / Φ(x)`, the inverse Mills ratio, evaluated in log space.
#[inline]
pub fn inverse_mills(x: f64) -> f64 {
    (log_phi(x) - log_normal_cdf(x)).exp()
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic function `1 / (1 + e^{-x})`.
#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln Σ exp(v)`. Returns `-inf` for an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Quantile of `N(0, 1)`.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}
