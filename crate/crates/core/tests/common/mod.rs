//! Independent oracles shared by the integration tests. Nothing here calls
//! into the code paths it is used to check.
#![allow(dead_code)]

use std::f64::consts::PI;

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

/// One Gauss–Kronrod 7/15 panel: (Kronrod estimate, |Kronrod − Gauss|).
fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

fn adapt(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let (k, err) = gk15(f, a, b);
    if err <= tol || depth == 0 {
        return k;
    }
    let m = 0.5 * (a + b);
    adapt(f, a, m, 0.5 * tol, depth - 1) + adapt(f, m, b, 0.5 * tol, depth - 1)
}

/// Adaptive Gauss–Kronrod quadrature over `[a, b]` split into `panels`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, panels: usize, tol: f64) -> f64 {
    let w = (b - a) / panels as f64;
    (0..panels)
        .map(|i| adapt(f, a + i as f64 * w, a + (i + 1) as f64 * w, tol / panels as f64, 14))
        .sum()
}

/// Non-adaptive composite Gauss–Kronrod estimate.
pub fn integrate_fixed(f: &dyn Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let w = (b - a) / panels as f64;
    (0..panels)
        .map(|i| gk15(f, a + i as f64 * w, a + (i + 1) as f64 * w).0)
        .sum()
}

fn binom(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * f64::from(n - i) / f64::from(i + 1))
}

/// `p0·((1 + u)^α − 1 − αu)` without cancellation or overflow, given
/// `log p0`.
fn weighted_excess(log_p0: f64, u: f64, alpha: u32) -> f64 {
    if u.abs() < 0.5 {
        let poly: f64 = (2..=alpha).map(|j| binom(alpha, j) * u.powi(j as i32)).sum();
        log_p0.exp() * poly
    } else {
        let a = f64::from(alpha);
        let p0 = log_p0.exp();
        (log_p0 + a * u.ln_1p()).exp() - p0 - p0 * a * u
    }
}

/// Order-α Rényi divergence `D_α((1−q)p0 + q·p1 ‖ p0)` with
/// `p0 = N(0, σ²)`, `p1 = N(1, σ²)`, by direct numerical integration of
/// `∫ p0 (μ/p0)^α dx`. The first-order term `α·∫p0·(μ/p0 − 1) = 0` is
/// removed analytically so the integrand is second order in q.
pub fn quadrature_rdp(alpha: u32, q: f64, sigma: f64) -> f64 {
    let var = sigma * sigma;
    let norm = 1.0 / (sigma * (2.0 * PI).sqrt());
    let integrand = move |x: f64| {
        let log_p0 = norm.ln() - x * x / (2.0 * var);
        let u = q * ((2.0 * x - 1.0) / (2.0 * var)).exp_m1();
        weighted_excess(log_p0, u, alpha)
    };
    let lo = -25.0 * sigma - 1.0;
    let hi = f64::from(alpha) + 25.0 * sigma + 1.0;
    // Scale tolerance to the integral itself.
    let rough = integrate_fixed(&integrand, lo, hi, 256);
    let tol = (rough.abs() * 1e-13).max(1e-300);
    let excess = integrate(&integrand, lo, hi, 64, tol);
    excess.ln_1p() / f64::from(alpha - 1)
}

/// Plain Gaussian mechanism conversion `min_α α/(2σ²) + log(1/δ)/(α−1)` over
/// `orders`, from scratch.
pub fn gaussian_epsilon(sigma: f64, delta: f64, orders: &[f64]) -> f64 {
    orders
        .iter()
        .map(|&a| a / (2.0 * sigma * sigma) + (1.0 / delta).ln() / (a - 1.0))
        .fold(f64::INFINITY, f64::min)
}

/// Sample mean and biased covariance by the textbook two-pass formula.
pub fn two_pass_moments(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = rows.len() as f64;
    let d = rows[0].len();
    let mut mean = vec![0.0; d];
    for r in rows {
        for j in 0..d {
            mean[j] += r[j];
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    let mut cov = vec![vec![0.0; d]; d];
    for r in rows {
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
        }
    }
    for row in cov.iter_mut() {
        for c in row.iter_mut() {
            *c /= n;
        }
    }
    (mean, cov)
}

/// Central finite-difference gradient of `f` at `theta`.
pub fn finite_difference(f: &dyn Fn(&[f64]) -> f64, theta: &[f64], h: f64) -> Vec<f64> {
    let mut x = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Relative error with an absolute floor for near-zero references.
pub fn rel_err(got: f64, want: f64, floor: f64) -> f64 {
    (got - want).abs() / want.abs().max(floor)
}
