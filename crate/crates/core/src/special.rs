//! Gaussian tail and incomplete-gamma helpers used by the bound assembly.

use std::f64::consts::PI;

/// Standard normal tail probability `Q(z) = erfc(z / sqrt(2)) / 2`.
pub fn q_function(z: f64) -> f64 {
    0.5 * libm::erfc(z / std::f64::consts::SQRT_2)
}

/// `ln Q(z)`, stable for large arguments where `Q` underflows.
///
/// Uses `erfc` directly up to z = 25 and the asymptotic expansion
/// `Q(z) ~ phi(z)/z * (1 - 1/z^2 + 3/z^4 - 15/z^6)` beyond.
pub fn ln_q_function(z: f64) -> f64 {
    if z <= 25.0 {
        q_function(z).ln()
    } else {
        let zi2 = 1.0 / (z * z);
        let series = 1.0 + zi2 * (-1.0 + zi2 * (3.0 - 15.0 * zi2));
        -0.5 * z * z - z.ln() - 0.5 * (2.0 * PI).ln() + series.ln()
    }
}

/// Normalized lower incomplete gamma function of order 3/2:
/// `(1 / Gamma(3/2)) * integral_0^q exp(-xi) sqrt(xi) d xi`.
///
/// Evaluated through the closed form `erf(sqrt(q)) - 2 sqrt(q/pi) exp(-q)`,
/// which the quadrature oracle in the test suite validates to 1e-10.
pub fn gamma_3_2(q: f64) -> f64 {
    assert!(q >= 0.0, "gamma_3_2 domain is q >= 0, got {q}");
    let root = q.sqrt();
    libm::erf(root) - 2.0 * (q / PI).sqrt() * (-q).exp()
}
