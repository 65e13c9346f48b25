//! Rényi-DP accounting for subsampled Gaussian mechanisms.
//!
//! Every privacy cost in the toolkit is tracked as an [`RdpCurve`]: the bound
//! γ(α) on the order-α Rényi divergence, sampled on a fixed grid of orders.
//! Curves compose by pointwise addition and are converted to a single
//! (ε, δ) statement with `ε = min_α γ(α) + log(1/δ)/(α − 1)`.
//!
//! The subsampled Gaussian mechanism (Poisson sampling at rate `q`, noise
//! multiplier `σ`, sensitivity 1) is evaluated for integer orders through the
//! binomial expansion of `E_{p0}[((1 − q) + q·p1/p0)^α]`, entirely in log space.
//! Fractional orders are bounded by the next integer above them, which is
//! valid because the Rényi divergence is nondecreasing in α.

use crate::error::{invalid, Error, Result};

/// Largest order the accountant will expand term by term.
const MAX_INTEGER_ORDER: f64 = 4096.0;

/// Default order grid: {1.5} ∪ {2, 3, …, 64}.
pub fn default_orders() -> Vec<f64> {
    std::iter::once(1.5)
        .chain((2..=64).map(f64::from))
        .collect()
}

/// Parameters of a (Poisson) subsampled Gaussian mechanism with unit
/// sensitivity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgmParams {
    q: f64,
    sigma: f64,
    steps: u64,
}

impl SgmParams {
    pub fn new(q: f64, sigma: f64, steps: u64) -> Result<Self> {
        if !(q > 0.0 && q <= 1.0) {
            return Err(invalid(format!("sampling rate q={q} outside (0, 1]")));
        }
        if !(sigma > 0.0) || sigma.is_nan() {
            return Err(invalid(format!("noise multiplier sigma={sigma} must be > 0")));
        }
        Ok(Self { q, sigma, steps })
    }

    /// One invocation of the mechanism.
    pub fn single(q: f64, sigma: f64) -> Result<Self> {
        Self::new(q, sigma, 1)
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }
}

/// Target (ε, δ) guarantee.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyBudget {
    epsilon: f64,
    delta: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(invalid(format!("epsilon={epsilon} must be finite and > 0")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(invalid(format!("delta={delta} outside (0, 1)")));
        }
        Ok(Self { epsilon, delta })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

/// RDP bound γ(α) sampled on a strictly increasing grid of orders α > 1.
#[derive(Debug, Clone, PartialEq)]
pub struct RdpCurve {
    orders: Vec<f64>,
    gammas: Vec<f64>,
}

impl RdpCurve {
    pub fn new(orders: Vec<f64>, gammas: Vec<f64>) -> Result<Self> {
        validate_orders(&orders)?;
        if orders.len() != gammas.len() {
            return Err(Error::DimensionMismatch {
                expected: orders.len(),
                actual: gammas.len(),
            });
        }
        if gammas.iter().any(|g| g.is_nan() || *g < 0.0) {
            return Err(invalid("RDP bounds must be nonnegative"));
        }
        Ok(Self { orders, gammas })
    }

    /// The additive identity on `orders`.
    pub fn zeros(orders: &[f64]) -> Result<Self> {
        Self::new(orders.to_vec(), vec![0.0; orders.len()])
    }

    pub fn orders(&self) -> &[f64] {
        &self.orders
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }

    pub fn len(&self) -> usize {
        self.orders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.orders.is_empty()
    }

    /// Pointwise sum of two curves over the same grid.
    pub fn add(&self, other: &RdpCurve) -> Result<RdpCurve> {
        if self.orders != other.orders {
            return Err(Error::GridMismatch);
        }
        let gammas = self
            .gammas
            .iter()
            .zip(&other.gammas)
            .map(|(a, b)| a + b)
            .collect();
        Ok(RdpCurve {
            orders: self.orders.clone(),
            gammas,
        })
    }

    pub(crate) fn add_assign(&mut self, other: &RdpCurve) -> Result<()> {
        if self.orders != other.orders {
            return Err(Error::GridMismatch);
        }
        for (a, b) in self.gammas.iter_mut().zip(&other.gammas) {
            *a += b;
        }
        Ok(())
    }

    /// `times` sequential copies of this curve.
    pub fn scale(&self, times: f64) -> RdpCurve {
        RdpCurve {
            orders: self.orders.clone(),
            gammas: self.gammas.iter().map(|g| g * times).collect(),
        }
    }
}

fn validate_orders(orders: &[f64]) -> Result<()> {
    if orders.is_empty() {
        return Err(Error::Empty("order grid"));
    }
    if orders.iter().any(|a| !(*a > 1.0) || !a.is_finite()) {
        return Err(invalid("every RDP order must be finite and > 1"));
    }
    if orders.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("RDP orders must be strictly increasing"));
    }
    Ok(())
}

fn validate_order(alpha: f64) -> Result<()> {
    if !(alpha > 1.0) || !alpha.is_finite() {
        return Err(invalid(format!("order alpha={alpha} must be finite and > 1")));
    }
    if alpha > MAX_INTEGER_ORDER {
        return Err(invalid(format!("order alpha={alpha} exceeds {MAX_INTEGER_ORDER}")));
    }
    Ok(())
}

/// `log(exp(a) + exp(b))`.
fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `log(exp(c) − 1)` for `c > 0`.
fn log_expm1(c: f64) -> f64 {
    if c < 1.0 {
        c.exp_m1().ln()
    } else {
        c + (-(-c).exp()).ln_1p()
    }
}

/// `n · log_x`, with the convention `0 · (−∞) = 0`.
fn times_log(n: f64, log_x: f64) -> f64 {
    if n == 0.0 {
        0.0
    } else {
        n * log_x
    }
}

/// `log E_{p0}[(μ/p0)^α]` for integer α ≥ 2 and mixture μ = (1 − q)p0 + q·p1.
///
/// Expanding `exp(k(k−1)/2σ²) = 1 + expm1(·)` turns the binomial sum into
/// `1 + Σ_{k≥2} C(α,k)(1−q)^{α−k} q^k expm1(k(k−1)/2σ²)`, whose terms are
/// all nonnegative, so the log of the excess is a cancellation-free
/// log-sum-exp.
fn log_moment_integer(alpha: u32, q: f64, sigma: f64) -> f64 {
    let a = f64::from(alpha);
    let log_q = q.ln();
    let log_1mq = (-q).ln_1p();
    let two_var = 2.0 * sigma * sigma;

    let mut log_binom = 0.0_f64; // log C(α, 0)
    let mut log_excess = f64::NEG_INFINITY;
    for k in 1..=alpha {
        let kf = f64::from(k);
        log_binom += (a - kf + 1.0).ln() - kf.ln();
        if k < 2 {
            continue;
        }
        let term = log_binom
            + times_log(kf, log_q)
            + times_log(a - kf, log_1mq)
            + log_expm1(kf * (kf - 1.0) / two_var);
        log_excess = log_add_exp(log_excess, term);
    }

    // log(1 + exp(log_excess))
    if log_excess <= 0.0 {
        log_excess.exp().ln_1p()
    } else {
        log_excess + (-log_excess).exp().ln_1p()
    }
}

/// RDP bound of the subsampled Gaussian mechanism at order `alpha`, summed
/// over `params.steps()` invocations.
///
/// Integer orders are exact. A fractional order is bounded by the next
/// integer above it.
pub fn rdp_sgm(alpha: f64, params: &SgmParams) -> Result<f64> {
    validate_order(alpha)?;
    let integer_order = alpha.ceil() as u32;
    let per_step = log_moment_integer(integer_order, params.q, params.sigma)
        / (f64::from(integer_order) - 1.0);
    Ok(per_step.max(0.0) * params.steps as f64)
}

/// RDP of the one-shot semantic-distribution query: the Gaussian mechanism
/// with noise multiplier `sigma2` after normalizing the sensitivity to 1.
///
/// `sigma2 = +∞` is accepted and costs nothing.
pub fn rdp_gaussian_query(alpha: f64, sigma2: f64) -> Result<f64> {
    if !(alpha > 1.0) || !alpha.is_finite() {
        return Err(invalid(format!("order alpha={alpha} must be finite and > 1")));
    }
    if !(sigma2 > 0.0) {
        return Err(invalid(format!("sigma2={sigma2} must be > 0")));
    }
    Ok(alpha / (2.0 * sigma2 * sigma2))
}

/// `rdp_sgm` evaluated at every order of a grid.
pub fn sgm_curve(orders: &[f64], params: &SgmParams) -> Result<RdpCurve> {
    validate_orders(orders)?;
    let gammas = orders
        .iter()
        .map(|&a| rdp_sgm(a, params))
        .collect::<Result<Vec<_>>>()?;
    RdpCurve::new(orders.to_vec(), gammas)
}

/// `rdp_gaussian_query` evaluated at every order of a grid.
pub fn gaussian_query_curve(orders: &[f64], sigma2: f64) -> Result<RdpCurve> {
    validate_orders(orders)?;
    let gammas = orders
        .iter()
        .map(|&a| rdp_gaussian_query(a, sigma2))
        .collect::<Result<Vec<_>>>()?;
    RdpCurve::new(orders.to_vec(), gammas)
}

/// Sequential composition: pointwise sum of curves that share `orders`.
/// An empty sequence composes to the zero curve.
pub fn compose_rdp(orders: &[f64], curves: &[RdpCurve]) -> Result<RdpCurve> {
    let mut total = RdpCurve::zeros(orders)?;
    for curve in curves {
        total.add_assign(curve)?;
    }
    Ok(total)
}

/// Result of converting an RDP curve to (ε, δ)-DP.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpGuarantee {
    pub epsilon: f64,
    pub delta: f64,
    /// Order at which the minimum was attained.
    pub order: f64,
}

/// `ε = min_α γ(α) + log(1/δ)/(α − 1)` over the curve's grid. Ties resolve to
/// the smallest order.
pub fn rdp_to_dp(curve: &RdpCurve, delta: f64) -> Result<DpGuarantee> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid(format!("delta={delta} outside (0, 1)")));
    }
    let log_inv_delta = -delta.ln();
    let mut best = DpGuarantee {
        epsilon: f64::INFINITY,
        delta,
        order: curve.orders[0],
    };
    for (&alpha, &gamma) in curve.orders.iter().zip(&curve.gammas) {
        let eps = gamma + log_inv_delta / (alpha - 1.0);
        if eps < best.epsilon {
            best.epsilon = eps;
            best.order = alpha;
        }
    }
    Ok(best)
}

/// Outcome of noise calibration for the fine-tuning stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub sigma1: f64,
    /// ε actually achieved by `sigma1` (never above the target).
    pub epsilon: f64,
    pub order: f64,
}

/// Projected ε of `steps` fine-tuning steps plus the one-shot semantic query.
pub fn composite_epsilon(
    orders: &[f64],
    delta: f64,
    steps: u64,
    q: f64,
    sigma1: f64,
    sigma2: f64,
) -> Result<DpGuarantee> {
    let sgm = sgm_curve(orders, &SgmParams::new(q, sigma1, steps)?)?;
    let query = gaussian_query_curve(orders, sigma2)?;
    rdp_to_dp(&sgm.add(&query)?, delta)
}

const SIGMA_BRACKET: (f64, f64) = (0.3, 100.0);
const SIGMA_CEILING: f64 = 1e7;
const SIGMA_FLOOR: f64 = 1e-4;
const MAX_BISECTIONS: usize = 200;

/// Smallest fine-tuning noise multiplier σ1 whose composite cost
/// (`steps` subsampled-Gaussian steps at rate `q` plus the semantic query at
/// `sigma2`) stays within `budget`.
///
/// ε is monotone decreasing in σ1, so this bisects on σ1 and returns the
/// upper (feasible) end of the final bracket.
pub fn calibrate_sigma1(
    budget: &PrivacyBudget,
    steps: u64,
    q: f64,
    sigma2: f64,
    orders: &[f64],
) -> Result<Calibration> {
    if steps == 0 {
        return Err(invalid("calibration needs at least one fine-tuning step"));
    }
    SgmParams::new(q, 1.0, steps)?;
    let target = budget.epsilon;
    let delta = budget.delta;

    let query_only = rdp_to_dp(&gaussian_query_curve(orders, sigma2)?, delta)?;
    if query_only.epsilon >= target {
        return Err(Error::InfeasibleBudget {
            query_epsilon: query_only.epsilon,
            target,
        });
    }

    let eps_at = |sigma1: f64| composite_epsilon(orders, delta, steps, q, sigma1, sigma2);

    let (mut lo, mut hi) = SIGMA_BRACKET;
    while eps_at(hi)?.epsilon > target {
        hi *= 2.0;
        if hi > SIGMA_CEILING {
            return Err(Error::NonConvergence(format!(
                "no sigma1 below {SIGMA_CEILING} meets epsilon {target}"
            )));
        }
    }
    while eps_at(lo)?.epsilon <= target {
        lo /= 2.0;
        if lo < SIGMA_FLOOR {
            return Err(Error::NonConvergence(format!(
                "epsilon {target} is met even at sigma1 < {SIGMA_FLOOR}"
            )));
        }
    }
    for _ in 0..MAX_BISECTIONS {
        if hi - lo <= 1e-12 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if eps_at(mid)?.epsilon > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    let achieved = eps_at(hi)?;
    let tolerance = 1e-3 * target.min(1.0);
    if achieved.epsilon > target || target - achieved.epsilon > tolerance {
        return Err(Error::NonConvergence(format!(
            "sigma1={hi} gives epsilon {} for target {target}",
            achieved.epsilon
        )));
    }
    Ok(Calibration {
        sigma1: hi,
        epsilon: achieved.epsilon,
        order: achieved.order,
    })
}
