//! Special functions for the Rényi accountant, evaluated in log space.

use crate::error::{Error, Result};

/// A real number stored as `sign · exp(log_abs)`. `sign` is -1, 0 or +1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignedLog {
    pub sign: i8,
    pub log_abs: f64,
}

impl SignedLog {
    pub const ZERO: SignedLog = SignedLog { sign: 0, log_abs: f64::NEG_INFINITY };

    pub fn positive(log_abs: f64) -> Self {
        if log_abs == f64::NEG_INFINITY {
            Self::ZERO
        } else {
            Self { sign: 1, log_abs }
        }
    }

    pub fn new(sign: i8, log_abs: f64) -> Self {
        if sign == 0 || log_abs == f64::NEG_INFINITY {
            Self::ZERO
        } else {
            Self { sign: sign.signum(), log_abs }
        }
    }

    pub fn from_f64(v: f64) -> Self {
        if v == 0.0 {
            Self::ZERO
        } else {
            Self { sign: if v > 0.0 { 1 } else { -1 }, log_abs: v.abs().ln() }
        }
    }

    pub fn to_f64(self) -> f64 {
        f64::from(self.sign) * self.log_abs.exp()
    }
}

/// `log(exp(a) + exp(b))`
pub fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `log(exp(a) - exp(b))` for `a >= b`; returns `-inf` when equal.
pub fn log_sub(a: f64, b: f64) -> f64 {
    debug_assert!(a >= b || b == f64::NEG_INFINITY);
    if b == f64::NEG_INFINITY {
        return a;
    }
    if a == b {
        return f64::NEG_INFINITY;
    }
    a + (-(b - a).exp()).ln_1p()
}

/// Signed log-sum-exp: `log|Σ sᵢ·exp(mᵢ)|` together with the sign of the sum.
///
/// Terms are sorted before accumulation, so the result does not depend on
/// the order of the input. Exact cancellation yields [`SignedLog::ZERO`].
pub fn log_sum_exp(terms: &[SignedLog]) -> SignedLog {
    let mut pos: Vec<f64> = Vec::new();
    let mut neg: Vec<f64> = Vec::new();
    for t in terms {
        match t.sign {
            1 => pos.push(t.log_abs),
            -1 => neg.push(t.log_abs),
            _ => {}
        }
    }
    let p = log_sum_exp_positive(&mut pos);
    let n = log_sum_exp_positive(&mut neg);
    if p == n {
        return SignedLog::ZERO;
    }
    if p > n {
        SignedLog::new(1, log_sub(p, n))
    } else {
        SignedLog::new(-1, log_sub(n, p))
    }
}

fn log_sum_exp_positive(logs: &mut [f64]) -> f64 {
    if logs.is_empty() {
        return f64::NEG_INFINITY;
    }
    logs.sort_by(f64::total_cmp);
    let max = *logs.last().unwrap();
    if max == f64::NEG_INFINITY {
        return max;
    }
    let s: f64 = logs.iter().map(|m| (m - max).exp()).sum();
    max + s.ln()
}

/// Streaming accumulator for long alternating series in log space.
#[derive(Debug, Clone, Copy)]
pub struct LogAccumulator {
    log_pos: f64,
    log_neg: f64,
}

impl Default for LogAccumulator {
    fn default() -> Self {
        Self { log_pos: f64::NEG_INFINITY, log_neg: f64::NEG_INFINITY }
    }
}

impl LogAccumulator {
    pub fn push(&mut self, term: SignedLog) {
        match term.sign {
            1 => self.log_pos = log_add(self.log_pos, term.log_abs),
            -1 => self.log_neg = log_add(self.log_neg, term.log_abs),
            _ => {}
        }
    }

    pub fn value(&self) -> SignedLog {
        if self.log_pos == self.log_neg {
            SignedLog::ZERO
        } else if self.log_pos > self.log_neg {
            SignedLog::new(1, log_sub(self.log_pos, self.log_neg))
        } else {
            SignedLog::new(-1, log_sub(self.log_neg, self.log_pos))
        }
    }
}

/// Natural log of `|Γ(x)|` with the sign of `Γ(x)`.
pub fn ln_gamma(x: f64) -> Result<(f64, i8)> {
    if x <= 0.0 && x == x.floor() {
        return Err(Error::Domain(format!("gamma pole at {x}")));
    }
    if !x.is_finite() {
        return Err(Error::Domain(format!("gamma of non-finite {x}")));
    }
    let (v, s) = libm::lgamma_r(x);
    Ok((v, if s < 0 { -1 } else { 1 }))
}

/// `log|C(n, k)|` for real `n ≥ 0` and integer `k ≥ 0`, through log-gamma.
///
/// Returns `-inf` when the coefficient is exactly zero (integer `n < k`).
/// Use [`binom_sign`] for the sign, which is negative for some real `n`.
pub fn log_binom(n: f64, k: u64) -> Result<f64> {
    if !(n >= 0.0) || !n.is_finite() {
        return Err(Error::Domain(format!("log_binom requires finite n >= 0, got {n}")));
    }
    let kf = k as f64;
    if n == n.floor() {
        if kf > n {
            return Ok(f64::NEG_INFINITY);
        }
        if n <= 170.0 {
            // exact-integer path via a product keeps Pascal's triangle tight
            let kk = kf.min(n - kf) as u64;
            let mut acc = 0.0f64;
            for j in 0..kk {
                acc += ((n - j as f64) / (j as f64 + 1.0)).ln();
            }
            return Ok(acc);
        }
    }
    let (a, _) = ln_gamma(n + 1.0)?;
    let (b, _) = ln_gamma(kf + 1.0)?;
    let (c, _) = ln_gamma(n - kf + 1.0)?;
    Ok(a - b - c)
}

/// Sign of `C(n, k)` for real `n ≥ 0`, integer `k`.
pub fn binom_sign(n: f64, k: u64) -> i8 {
    if n == n.floor() {
        return if (k as f64) > n { 0 } else { 1 };
    }
    // C(n,k) = Π_{j<k} (n - j) / k!; factors with j > n are negative
    let negatives = (k as i64 - 1 - n.floor() as i64).max(0);
    if negatives % 2 == 0 {
        1
    } else {
        -1
    }
}

/// Signed `log C(n, k)`.
pub fn signed_log_binom(n: f64, k: u64) -> Result<SignedLog> {
    let sign = binom_sign(n, k);
    if sign == 0 {
        return Ok(SignedLog::ZERO);
    }
    Ok(SignedLog::new(sign, log_binom(n, k)?))
}

/// Complementary error function.
pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

/// `ln(erfc(x))`, accurate far into the upper tail where `erfc` underflows.
pub fn log_erfc(x: f64) -> f64 {
    if x < 25.0 {
        return libm::erfc(x).ln();
    }
    // erfc(x) ~ exp(-x²)/(x√π) · (1 - 1/(2x²) + 3/(4x⁴) - 15/(8x⁶) + 105/(16x⁸))
    let inv2 = 1.0 / (x * x);
    let series = 1.0 - 0.5 * inv2 + 0.75 * inv2.powi(2) - 1.875 * inv2.powi(3) + 6.5625 * inv2.powi(4);
    -x * x - x.ln() - 0.5 * std::f64::consts::PI.ln() + series.ln()
}
