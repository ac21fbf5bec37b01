//! Exact viscous Burgers solution for `u(0, x) = −sin(πx)` via the
//! Cole–Hopf transform.

use std::f64::consts::PI;

/// `u(t, x)` for `u_t + u u_x = ν u_xx`, `u(0, x) = −sin(πx)`.
///
/// With `η = x − √(4νt)·s` the solution is a ratio of Gaussian-weighted
/// integrals over `s`, evaluated by the trapezoidal rule on `[−14, 14]`
/// with log-weights shifted by their maximum so nothing overflows.
pub fn cole_hopf(t: f64, x: f64, nu: f64) -> f64 {
    if t <= 0.0 {
        return -(PI * x).sin();
    }
    const NODES: usize = 40_001;
    const HALF_WIDTH: f64 = 14.0;
    let sigma = (4.0 * nu * t).sqrt();
    let h = 2.0 * HALF_WIDTH / (NODES - 1) as f64;
    let log_w = |s: f64| -s * s - (PI * (x - sigma * s)).cos() / (2.0 * PI * nu);
    let max = (0..NODES)
        .map(|i| log_w(-HALF_WIDTH + i as f64 * h))
        .fold(f64::NEG_INFINITY, f64::max);
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..NODES {
        let s = -HALF_WIDTH + i as f64 * h;
        let w = (log_w(s) - max).exp();
        num += (PI * (x - sigma * s)).sin() * w;
        den += w;
    }
    -num / den
}
