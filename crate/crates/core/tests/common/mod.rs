//! Oracles shared by the integration tests. Nothing here calls into the crate.
#![allow(dead_code)]

use std::f64::consts::PI;

/// `1 − e^{−1/4}` (mpmath, 15 digits).
pub const ONE_MINUS_EXP_QUARTER: f64 = 0.221199216928595;
/// `erf(1/2)` (mpmath).
pub const ERF_HALF: f64 = 0.520499877813047;
/// `1/√(4π)`, the density of `N(0, 2)` at 0.
pub const INV_SQRT_4PI: f64 = 0.282094791773878;
/// `½∫ | |u|e^{−u²} − e^{−u²}/√π | du` over ℝ, in closed form
/// `e^{−1/π} − erfc(1/√π)` (mpmath).
pub const TV_GUIDING: f64 = 0.302439865611854;

pub const GAUSS2: &str = "exp(-(x1^2+x2^2)/2)/(2*pi)";
pub const STD: &str = "exp(-x1^2/2)/sqrt(2*pi)";
pub const RATIO_LIKELIHOOD: &str = "abs(x1)*exp(-(x1*x2)^2/2)/sqrt(2*pi)";
pub const SUM_LIKELIHOOD: &str = "exp(-(x2-x1)^2/2)/sqrt(2*pi)";

pub fn ratio_density(u: f64) -> f64 {
    u.abs() * (-u * u).exp()
}

pub fn sum_density(u: f64) -> f64 {
    (-u * u).exp() / PI.sqrt()
}

/// Composite Simpson with `n` (rounded up to even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Simpson over consecutive breakpoints, so kinks sit on panel edges.
pub fn simpson_pieces(f: impl Fn(f64) -> f64, breaks: &[f64], n_each: usize) -> f64 {
    breaks.windows(2).map(|w| simpson(&f, w[0], w[1], n_each)).sum()
}

/// Total variation between the two guiding-example densities, by quadrature
/// on `[−12, 12]` split at the kinks `0` and `±1/√π`.
pub fn tv_guiding_quadrature() -> f64 {
    let k = 1.0 / PI.sqrt();
    let d = |u: f64| (ratio_density(u) - sum_density(u)).abs();
    0.5 * simpson_pieces(d, &[-12.0, -k, 0.0, k, 12.0], 20_000)
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}
