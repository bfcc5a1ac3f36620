//! Standard normal density and distribution functions.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// `φ(x)`
pub fn pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// `Φ(x)`, accurate in both tails.
pub fn cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail `1 - Φ(x)` without cancellation.
pub fn sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

/// Standard normal mass of the open interval `(a, b)`, `a <= b`.
pub fn mass(a: f64, b: f64) -> f64 {
    if a >= b {
        return 0.0;
    }
    // subtract in whichever tail keeps both terms small
    if a >= 0.0 {
        sf(a) - sf(b)
    } else {
        cdf(b) - cdf(a)
    }
}
