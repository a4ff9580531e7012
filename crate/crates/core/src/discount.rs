//! Discount functions `δ` with `δ(0) = 1`, strictly decreasing to zero.
//!
//! Only families that are differentiable at the origin with `δ'(0) < 0` are
//! provided. Quasi-hyperbolic discounting jumps at `t = 0` and is not
//! supported.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DiscountFn {
    /// `e^{-rt}`
    Exponential { rate: f64 },
    /// `1 / (1 + βt)`
    Hyperbolic { beta: f64 },
    /// `(1 + βt)^{-γ}`
    GeneralizedHyperbolic { beta: f64, gamma: f64 },
}

/// How a log-subadditivity verdict was reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Certificate {
    /// The family has decreasing impatience, which implies the inequality.
    Analytic,
    /// Checked on a finite grid of `(s, t)` pairs.
    Grid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogSubadditivity {
    pub holds: bool,
    /// `max δ(s)δ(t) − δ(s+t)` over the checked pairs (0 for analytic).
    pub worst_violation: f64,
    pub certificate: Certificate,
}

impl DiscountFn {
    pub fn exponential(rate: f64) -> Result<Self> {
        check_positive("rate", rate)?;
        Ok(Self::Exponential { rate })
    }

    pub fn hyperbolic(beta: f64) -> Result<Self> {
        check_positive("beta", beta)?;
        Ok(Self::Hyperbolic { beta })
    }

    pub fn generalized_hyperbolic(beta: f64, gamma: f64) -> Result<Self> {
        check_positive("beta", beta)?;
        check_positive("gamma", gamma)?;
        Ok(Self::GeneralizedHyperbolic { beta, gamma })
    }

    /// Re-checks the parameters of a value built without a constructor
    /// (e.g. deserialized).
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Exponential { rate } => check_positive("rate", rate),
            Self::Hyperbolic { beta } => check_positive("beta", beta),
            Self::GeneralizedHyperbolic { beta, gamma } => {
                check_positive("beta", beta)?;
                check_positive("gamma", gamma)
            }
        }
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        if t < 0.0 || t.is_nan() {
            return Err(Error::NegativeTime(t));
        }
        Ok(self.at(t))
    }

    /// Unchecked evaluation for `t ≥ 0`; `δ(∞) = 0`.
    #[inline]
    pub fn at(&self, t: f64) -> f64 {
        match *self {
            Self::Exponential { rate } => (-rate * t).exp(),
            Self::Hyperbolic { beta } => 1.0 / (1.0 + beta * t),
            Self::GeneralizedHyperbolic { beta, gamma } => (1.0 + beta * t).powf(-gamma),
        }
    }

    /// `(δ'(0), δ''(0))`.
    pub fn derivatives_at_zero(&self) -> (f64, f64) {
        match *self {
            Self::Exponential { rate } => (-rate, rate * rate),
            Self::Hyperbolic { beta } => (-beta, 2.0 * beta * beta),
            Self::GeneralizedHyperbolic { beta, gamma } => (-gamma * beta, gamma * (gamma + 1.0) * beta * beta),
        }
    }

    pub fn slope_at_zero(&self) -> f64 {
        self.derivatives_at_zero().0
    }

    /// `(δ''(0) − 2δ'(0)²)/(−δ'(0))`, the rate bound in the two-state
    /// second-order test.
    pub fn second_order_threshold(&self) -> f64 {
        let (d1, d2) = self.derivatives_at_zero();
        (d2 - 2.0 * d1 * d1) / (-d1)
    }

    pub fn is_exponential(&self) -> bool {
        matches!(self, Self::Exponential { .. })
    }

    /// Every built-in family induces decreasing impatience, so the
    /// inequality `δ(s)δ(t) ≤ δ(s+t)` is certified analytically.
    pub fn check_log_subadditive(&self, _grid_max: f64, _grid_points: usize) -> LogSubadditivity {
        LogSubadditivity {
            holds: true,
            worst_violation: 0.0,
            certificate: Certificate::Analytic,
        }
    }

    /// `E[δ(shift + T)]` for `T ~ Exp(rate)`, i.e. `∫₀^∞ λ δ(shift+t) e^{-λt} dt`.
    pub fn expected_discount_of_exponential(&self, rate: f64, shift: f64) -> Result<f64> {
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(Error::NonpositiveRate(rate));
        }
        if shift < 0.0 || shift.is_nan() {
            return Err(Error::NegativeTime(shift));
        }
        Ok(self.gamma_mean(1, 0.0, rate, shift).value)
    }

    /// `E[δ(shift + G)]` for `G ~ Gamma(shape, rate)` with integer shape.
    pub fn expected_discount_of_gamma(&self, shape: u64, rate: f64, shift: f64) -> Result<f64> {
        if shape == 0 {
            return Err(Error::InvalidParameter("gamma shape must be at least 1".into()));
        }
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(Error::NonpositiveRate(rate));
        }
        if shift < 0.0 || shift.is_nan() {
            return Err(Error::NegativeTime(shift));
        }
        let ln_gamma: f64 = (1..shape).map(|j| (j as f64).ln()).sum();
        Ok(self.gamma_mean(shape, ln_gamma, rate, shift).value)
    }

    /// Quadrature core shared by the public gamma/exponential expectations.
    /// `ln_gamma` must be `ln((shape-1)!)`.
    pub(crate) fn gamma_mean(&self, shape: u64, ln_gamma: f64, rate: f64, shift: f64) -> quad::Integral {
        let n = shape as f64;
        let sd = n.sqrt();
        let density = move |u: f64| -> f64 {
            if u <= 0.0 {
                return if shape == 1 { 1.0 } else { 0.0 };
            }
            ((n - 1.0) * u.ln() - u - ln_gamma).exp()
        };
        // Integrate in the scaled variable u = rate·t, G·rate ~ Gamma(shape, 1).
        let f = |u: f64| self.at(shift + u / rate) * density(u);
        let lo = (n - 12.0 * sd).max(0.0);
        let hi = n + 12.0 * sd + 40.0;
        let mode = n - 1.0;
        let mut breaks = vec![lo];
        for b in [mode - 3.0 * sd, mode, mode + 3.0 * sd] {
            if b > *breaks.last().unwrap() && b < hi {
                breaks.push(b);
            }
        }
        breaks.push(hi);
        quad::integrate_pieces(f, &breaks, 1e-15, 1e-13)
    }

    /// Reference value `λ/(λ − δ'(0))`, the expected discount over an
    /// `Exp(λ)` holding time if `δ` were exponential with the same slope.
    pub(crate) fn exponential_bound(&self, rate: f64) -> f64 {
        rate / (rate - self.slope_at_zero())
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

/// Grid check of `δ(s)δ(t) ≤ δ(s+t)` for an arbitrary discount function on
/// `s, t ∈ (0, grid_max]`. Holds iff the worst violation is at most 1e-12.
pub fn check_log_subadditive_on_grid<F: Fn(f64) -> f64>(
    delta: F,
    grid_max: f64,
    grid_points: usize,
) -> LogSubadditivity {
    let pts = grid_points.max(1);
    let grid: Vec<f64> = (1..=pts).map(|i| grid_max * i as f64 / pts as f64).collect();
    let mut worst = f64::NEG_INFINITY;
    for &s in &grid {
        for &t in &grid {
            worst = worst.max(delta(s) * delta(t) - delta(s + t));
        }
    }
    LogSubadditivity {
        holds: worst <= 1e-12,
        worst_violation: worst,
        certificate: Certificate::Grid,
    }
}
