//! Special functions needed by the closed-form oracles and schedule constants.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Regularized upper incomplete gamma `Q(k/2, x)` for a positive integer `k`,
/// by the finite recurrences from `Q(1, x) = e^{-x}` and `Q(1/2, x) = erfc(√x)`.
pub fn gamma_q_half_integer(k: usize, x: f64) -> f64 {
    assert!(k > 0, "shape must be positive");
    if x <= 0.0 {
        return 1.0;
    }
    let (mut q, mut a) = if k % 2 == 0 {
        ((-x).exp(), 1.0)
    } else {
        (libm::erfc(x.sqrt()), 0.5)
    };
    let target = k as f64 / 2.0;
    // Q(a+1, x) = Q(a, x) + x^a e^{-x} / Γ(a+1)
    while a < target - 1e-9 {
        q += (a * x.ln() - x - ln_gamma(a + 1.0)).exp();
        a += 1.0;
    }
    q.min(1.0)
}

/// `P(Gamma(k, 1) > x)` for integer shape `k`.
pub fn gamma_tail(k: usize, x: f64) -> f64 {
    gamma_q_half_integer(2 * k, x)
}

/// `P(χ²_k > x)`.
pub fn chi_square_tail(k: usize, x: f64) -> f64 {
    gamma_q_half_integer(k, 0.5 * x)
}
