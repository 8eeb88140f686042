//! Rényi-DP accountant for iterated sampled Gaussian mechanisms with
//! group (provider-level) sampling, plus noise-multiplier calibration.
//!
//! All quantities are in units of the sensitivity: `sigma` is the ratio of
//! the noise standard deviation to the clipping norm.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::math::special::{log_add, log_erfc, signed_log_binom, LogAccumulator, SignedLog};

/// Upper bound on series terms in the fractional-order expansion.
pub const MAX_SERIES_TERMS: usize = 1_000_000;
const SERIES_REL_TOL: f64 = 1e-12;
const SERIES_QUIET_TERMS: usize = 3;

/// Bisection bracket and stopping rule used by [`calibrate_sigma`].
pub const SIGMA_BRACKET: (f64, f64) = (0.1, 1000.0);
pub const CALIBRATION_TOL: f64 = 1e-4;
pub const CALIBRATION_MAX_ITERS: usize = 200;

/// Sampled-Gaussian-mechanism parameters: sampling rate, noise multiplier, step count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgmParams {
    pub q: f64,
    pub sigma: f64,
    pub steps: u64,
}

impl SgmParams {
    pub fn new(q: f64, sigma: f64, steps: u64) -> Result<Self> {
        let p = Self { q, sigma, steps };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.q) {
            return Err(config_err(format!("sampling rate q must lie in [0, 1], got {}", self.q)));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(config_err(format!("noise multiplier must be > 0, got {}", self.sigma)));
        }
        if self.steps == 0 {
            return Err(config_err("steps must be >= 1"));
        }
        Ok(())
    }
}

/// Sorted, strictly ascending Rényi orders, all `> 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaGrid {
    orders: Vec<f64>,
}

impl AlphaGrid {
    pub fn new(mut orders: Vec<f64>) -> Result<Self> {
        if orders.is_empty() {
            return Err(config_err("alpha grid is empty"));
        }
        if let Some(bad) = orders.iter().find(|a| !(**a > 1.0) || !a.is_finite()) {
            return Err(config_err(format!("alpha orders must be finite and > 1, got {bad}")));
        }
        orders.sort_by(f64::total_cmp);
        orders.dedup();
        Ok(Self { orders })
    }

    pub fn orders(&self) -> &[f64] {
        &self.orders
    }
}

impl Default for AlphaGrid {
    /// Integers 2..=256 together with 1.25, 1.5, 1.75 and the half-integers 2.5..=63.5.
    fn default() -> Self {
        let mut orders = vec![1.25, 1.5, 1.75];
        orders.extend((2..=256).map(f64::from));
        orders.extend((2..=63).map(|i| f64::from(i) + 0.5));
        Self::new(orders).expect("default grid is valid")
    }
}

/// An `(ε, δ)` guarantee and the Rényi order attaining it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacySpend {
    pub epsilon: f64,
    pub delta: f64,
    pub best_alpha: f64,
}

/// Per-order Rényi divergence budget of a (composed) mechanism.
#[derive(Debug, Clone, PartialEq)]
pub struct RdpCurve {
    pub orders: Vec<f64>,
    pub rdp: Vec<f64>,
}

impl RdpCurve {
    /// Adds the budgets of two mechanisms evaluated on the same grid.
    pub fn compose(&self, other: &RdpCurve) -> Result<RdpCurve> {
        if self.orders != other.orders {
            return Err(config_err("cannot compose RDP curves on different alpha grids"));
        }
        let rdp = self.rdp.iter().zip(&other.rdp).map(|(a, b)| a + b).collect();
        Ok(RdpCurve { orders: self.orders.clone(), rdp })
    }
}

fn is_integer(alpha: f64) -> bool {
    alpha == alpha.floor()
}

/// `ξ(α | q)` for integer `α ≥ 2`: the binomial expansion of `A_α`.
pub fn xi_integer(alpha: u64, q: f64, sigma: f64) -> Result<f64> {
    if alpha < 2 {
        return Err(Error::Domain(format!("integer order must be >= 2, got {alpha}")));
    }
    check_q_sigma(q, sigma)?;
    if q == 0.0 {
        return Ok(0.0);
    }
    let a = alpha as f64;
    let ln_q = q.ln();
    let ln_1mq = (-q).ln_1p();
    let two_var = 2.0 * sigma * sigma;
    let mut log_a = f64::NEG_INFINITY;
    for k in 0..=alpha {
        let kf = k as f64;
        let coef = signed_log_binom(a, k)?.log_abs;
        let pow_1mq = if k == alpha { 0.0 } else { (a - kf) * ln_1mq };
        let pow_q = if k == 0 { 0.0 } else { kf * ln_q };
        log_a = log_add(log_a, coef + pow_1mq + pow_q + (kf * kf - kf) / two_var);
    }
    Ok((log_a / (a - 1.0)).max(0.0))
}

/// `ξ(α | q)` for non-integer `α > 1`, via the two erfc-weighted series split
/// at the crossover `z₁ = σ²·ln(1/q − 1) + 1/2` of the mixture densities.
pub fn xi_fractional(alpha: f64, q: f64, sigma: f64) -> Result<f64> {
    if !(alpha > 1.0) || is_integer(alpha) || !alpha.is_finite() {
        return Err(Error::Domain(format!("fractional order must be a non-integer > 1, got {alpha}")));
    }
    check_q_sigma(q, sigma)?;
    if q == 0.0 {
        return Ok(0.0);
    }
    if q == 1.0 {
        // no subsampling: plain Gaussian mechanism
        return Ok(alpha / (2.0 * sigma * sigma));
    }
    let ln_q = q.ln();
    let ln_1mq = (-q).ln_1p();
    let two_var = 2.0 * sigma * sigma;
    let z1 = sigma * sigma * (1.0 / q - 1.0).ln() + 0.5;
    let sqrt2_sigma = std::f64::consts::SQRT_2 * sigma;
    let ln_half = 0.5f64.ln();

    let mut upper = LogAccumulator::default();
    let mut lower = LogAccumulator::default();
    let mut quiet = 0usize;
    for k in 0..MAX_SERIES_TERMS as u64 {
        let kf = k as f64;
        let coef = signed_log_binom(alpha, k)?;
        if coef.sign == 0 {
            continue;
        }
        let j = alpha - kf;
        let s0 = coef.log_abs + kf * ln_q + j * ln_1mq + (kf * kf - kf) / two_var
            + ln_half
            + log_erfc((kf - z1) / sqrt2_sigma);
        let s1 = coef.log_abs + j * ln_q + kf * ln_1mq + (j * j - j) / two_var
            + ln_half
            + log_erfc((z1 - j) / sqrt2_sigma);
        upper.push(SignedLog::new(coef.sign, s0));
        lower.push(SignedLog::new(coef.sign, s1));

        if kf > alpha {
            let total = combine(upper.value(), lower.value());
            let rel = s0.max(s1) - total.log_abs;
            if total.sign > 0 && rel < SERIES_REL_TOL.ln() {
                quiet += 1;
                if quiet >= SERIES_QUIET_TERMS {
                    return Ok((total.log_abs / (alpha - 1.0)).max(0.0));
                }
            } else {
                quiet = 0;
            }
        }
    }
    Err(Error::Convergence { terms: MAX_SERIES_TERMS })
}

fn combine(a: SignedLog, b: SignedLog) -> SignedLog {
    let mut acc = LogAccumulator::default();
    acc.push(a);
    acc.push(b);
    acc.value()
}

fn check_q_sigma(q: f64, sigma: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&q) {
        return Err(config_err(format!("sampling rate q must lie in [0, 1], got {q}")));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(config_err(format!("noise multiplier must be > 0, got {sigma}")));
    }
    Ok(())
}

/// Per-step RDP bound `ξ(α | q)` at any order `α > 1`.
pub fn xi(alpha: f64, q: f64, sigma: f64) -> Result<f64> {
    if is_integer(alpha) && alpha >= 2.0 {
        xi_integer(alpha as u64, q, sigma)
    } else {
        xi_fractional(alpha, q, sigma)
    }
}

/// RDP of `params.steps` adaptive compositions of the sampled Gaussian mechanism.
pub fn rdp_curve(params: &SgmParams, grid: &AlphaGrid) -> Result<RdpCurve> {
    params.validate()?;
    let steps = params.steps as f64;
    let rdp = grid
        .orders()
        .iter()
        .map(|&a| xi(a, params.q, params.sigma).map(|x| steps * x))
        .collect::<Result<Vec<_>>>()?;
    Ok(RdpCurve { orders: grid.orders().to_vec(), rdp })
}

/// Converts an RDP curve to `(ε, δ)`, minimizing over the orders.
pub fn epsilon_from_rdp(curve: &RdpCurve, delta: f64) -> Result<PrivacySpend> {
    check_delta(delta)?;
    if curve.orders.is_empty() {
        return Err(config_err("alpha grid is empty"));
    }
    let ln_delta = delta.ln();
    let mut best = PrivacySpend { epsilon: f64::INFINITY, delta, best_alpha: curve.orders[0] };
    for (&a, &rho) in curve.orders.iter().zip(&curve.rdp) {
        let eps = rho + ((a - 1.0) / a).ln() - (ln_delta + a.ln()) / (a - 1.0);
        if eps < best.epsilon {
            best.epsilon = eps;
            best.best_alpha = a;
        }
    }
    best.epsilon = best.epsilon.max(0.0);
    Ok(best)
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(config_err(format!("delta must lie in (0, 1), got {delta}")));
    }
    Ok(())
}

/// `(ε, δ)` after `steps` rounds: `min_α T·ξ(α|q) + log((α−1)/α) − (log δ + log α)/(α−1)`.
///
/// A zero sampling rate never touches the data and reports `ε = 0`.
pub fn compose_and_convert(params: &SgmParams, delta: f64, grid: &AlphaGrid) -> Result<PrivacySpend> {
    params.validate()?;
    check_delta(delta)?;
    if params.q == 0.0 {
        return Ok(PrivacySpend { epsilon: 0.0, delta, best_alpha: grid.orders()[0] });
    }
    epsilon_from_rdp(&rdp_curve(params, grid)?, delta)
}

/// Smallest noise multiplier (to relative precision [`CALIBRATION_TOL`]) whose
/// spend stays within `target_epsilon`.
///
/// Returns the bracket floor when even that spends no more than the target
/// (in particular for `q = 0`).
pub fn calibrate_sigma(
    target_epsilon: f64,
    delta: f64,
    q: f64,
    steps: u64,
    grid: &AlphaGrid,
) -> Result<f64> {
    if !(target_epsilon > 0.0) || !target_epsilon.is_finite() {
        return Err(config_err(format!("target epsilon must be > 0, got {target_epsilon}")));
    }
    let eps_at = |sigma: f64| -> Result<f64> {
        Ok(compose_and_convert(&SgmParams::new(q, sigma, steps)?, delta, grid)?.epsilon)
    };
    let (mut lo, mut hi) = SIGMA_BRACKET;
    if eps_at(lo)? <= target_epsilon {
        return Ok(lo);
    }
    if eps_at(hi)? > target_epsilon {
        return Err(Error::Calibration(format!(
            "epsilon {target_epsilon} unreachable with sigma <= {hi} (q = {q}, steps = {steps})"
        )));
    }
    for _ in 0..CALIBRATION_MAX_ITERS {
        if hi - lo <= CALIBRATION_TOL * hi {
            return Ok(hi);
        }
        let mid = 0.5 * (lo + hi);
        if eps_at(mid)? > target_epsilon {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Probability that a given provider group takes part in a round:
/// `C·M / min_k |G_k|`, clamped to `[0, 1]`.
pub fn group_sampling_rate(client_prob: f64, providers_per_round: usize, min_group_count: usize) -> Result<f64> {
    if min_group_count == 0 {
        return Err(config_err("min_group_count must be >= 1"));
    }
    if providers_per_round == 0 {
        return Err(config_err("providers_per_round must be >= 1"));
    }
    if !(0.0..=1.0).contains(&client_prob) {
        return Err(config_err(format!("client probability must lie in [0, 1], got {client_prob}")));
    }
    Ok((client_prob * providers_per_round as f64 / min_group_count as f64).clamp(0.0, 1.0))
}
