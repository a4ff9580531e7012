//! American put on a geometric birth–death price `Y ∈ {uⁱ}` under hyperbolic
//! discounting, with payoff `(K − y)⁺`.
//!
//! The lattice is truncated to levels `i_min..=i_max`: the bottom level only
//! moves up and the top level absorbs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ctmc::{transition_matrix, Chain};
use crate::discount::DiscountFn;
use crate::equilibrium::{default_tolerance, iterate_optimal, IterationTrace};
use crate::error::{Error, Result};
use crate::region::StoppingRegion;
use crate::valuation::Valuator;

/// Levels kept above `log_u K` by the default truncation.
pub const DEFAULT_TOP_MARGIN: i64 = 25;
/// Default pre-commitment time step, as a multiple of `1/λ`.
pub const DEFAULT_DT_LAMBDA: f64 = 0.01;
/// Relative depth below which the default truncation stops: `u^{i_min} < 1e-6·K`.
pub const DEFAULT_BOTTOM_DEPTH: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PutModel {
    pub u: f64,
    pub p: f64,
    pub lambda: f64,
    pub beta: f64,
    pub strike: f64,
    pub i_min: i64,
    pub i_max: i64,
}

impl PutModel {
    /// Model with the default truncation.
    pub fn new(u: f64, p: f64, lambda: f64, beta: f64, strike: f64) -> Result<Self> {
        check_rates(u, p, lambda, beta, strike)?;
        let (i_min, i_max) = Self::default_truncation(u, strike);
        let m = Self {
            u,
            p,
            lambda,
            beta,
            strike,
            i_min,
            i_max,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn with_truncation(mut self, i_min: i64, i_max: i64) -> Result<Self> {
        self.i_min = i_min;
        self.i_max = i_max;
        self.validate()?;
        Ok(self)
    }

    /// `i_min = ⌊log_u(1e-6·K)⌋ − 1`, `i_max = ⌈log_u K⌉ + 25`.
    pub fn default_truncation(u: f64, strike: f64) -> (i64, i64) {
        let lo = (DEFAULT_BOTTOM_DEPTH * strike).ln() / u.ln();
        let hi = strike.ln() / u.ln();
        (lo.floor() as i64 - 1, hi.ceil() as i64 + DEFAULT_TOP_MARGIN)
    }

    pub fn validate(&self) -> Result<()> {
        check_rates(self.u, self.p, self.lambda, self.beta, self.strike)?;
        if self.i_min >= self.i_max {
            return Err(Error::TruncationTooNarrow(format!(
                "need i_min < i_max, got {}..{}",
                self.i_min, self.i_max
            )));
        }
        if self.price_at_level(self.i_max) <= self.strike {
            return Err(Error::TruncationTooNarrow(format!(
                "top price u^{} = {} does not exceed the strike {}",
                self.i_max,
                self.price_at_level(self.i_max),
                self.strike
            )));
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        (self.i_max - self.i_min + 1) as usize
    }

    pub fn level(&self, index: usize) -> i64 {
        self.i_min + index as i64
    }

    pub fn index(&self, level: i64) -> Option<usize> {
        (self.i_min..=self.i_max)
            .contains(&level)
            .then(|| (level - self.i_min) as usize)
    }

    pub fn price_at_level(&self, level: i64) -> f64 {
        self.u.powi(level as i32)
    }

    pub fn payoff_at_level(&self, level: i64) -> f64 {
        (self.strike - self.price_at_level(level)).max(0.0)
    }

    pub fn discount(&self) -> DiscountFn {
        DiscountFn::Hyperbolic { beta: self.beta }
    }
}

fn check_rates(u: f64, p: f64, lambda: f64, beta: f64, strike: f64) -> Result<()> {
    let finite = [u, p, lambda, beta, strike].iter().all(|v| v.is_finite());
    if !finite || !(u > 1.0) {
        return Err(Error::InvalidParameter(format!("up factor must exceed 1, got {u}")));
    }
    if !(p >= 1.0 / (1.0 + u) && p < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "up probability must lie in [1/(1+u), 1) = [{}, 1), got {p}",
            1.0 / (1.0 + u)
        )));
    }
    for (name, v) in [("lambda", lambda), ("beta", beta), ("strike", strike)] {
        if !(v > 0.0) {
            return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
        }
    }
    Ok(())
}

/// Truncated lattice chain; state `j` is level `i_min + j`.
pub fn build_put_chain(m: &PutModel) -> Result<Chain> {
    m.validate()?;
    let n = m.n_states();
    let up = m.p * m.lambda;
    let down = (1.0 - m.p) * m.lambda;
    let mut rates = vec![vec![0.0; n]; n];
    for (j, row) in rates.iter_mut().enumerate().take(n - 1) {
        row[j + 1] = up;
        if j > 0 {
            row[j - 1] = down;
        }
    }
    let values = (0..n).map(|j| m.payoff_at_level(m.level(j))).collect();
    let labels = (0..n).map(|j| format!("u^{}", m.level(j))).collect();
    Chain::from_rates(values, &rates)?.with_labels(labels)
}

/// `C(2k−1,k) p^{k−1}(1−p)^k/(2k−1)`: probability that the embedded walk
/// first steps below its start on jump `2k−1`.
pub fn first_passage_weight(k: u64, p: f64) -> f64 {
    assert!(k >= 1);
    let ln_fact = |n: u64| -> f64 { (2..=n).map(|j| (j as f64).ln()).sum() };
    let kf = k as f64;
    (ln_fact(2 * k - 1) - ln_fact(k) - ln_fact(k - 1) + (kf - 1.0) * p.ln() + kf * (1.0 - p).ln()
        - (2.0 * kf - 1.0).ln())
    .exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeriesSum {
    pub value: f64,
    pub terms: usize,
    /// Certified bound on the omitted terms.
    pub tail_bound: f64,
}

const SERIES_CAP: usize = 5_000_000;
const SERIES_CHUNK: usize = 512;

/// `α₁ = E_{uⁱ}[δ(τ_{uⁱ⁻¹})] = Σ_k w_k E[δ(Gamma(2k−1, λ))]` on the
/// untruncated lattice.
pub fn alpha1_series(m: &PutModel, tol: f64) -> Result<SeriesSum> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    check_rates(m.u, m.p, m.lambda, m.beta, m.strike)?;
    let d = m.discount();
    let (p, q) = (m.p, 1.0 - m.p);
    let total = (q / p).min(1.0);
    let (ln_p, ln_q) = (p.ln(), q.ln());
    // ln((2k−1)!), ln(k!), ln((k−1)!) and ln((2k−2)!) advanced term by term.
    let mut ln_f2k1 = 0.0f64;
    let mut ln_fk = 0.0f64;
    let mut ln_fk1 = 0.0f64;
    let mut ln_f2k2 = 0.0f64;
    let mut partial_w = 0.0;
    let mut value = 0.0;
    let mut k: u64 = 0;
    loop {
        let mut batch = Vec::with_capacity(SERIES_CHUNK);
        for _ in 0..SERIES_CHUNK {
            k += 1;
            if k > 1 {
                let kf = k as f64;
                ln_f2k2 = ln_f2k1 + (2.0 * kf - 2.0).ln();
                ln_f2k1 = ln_f2k2 + (2.0 * kf - 1.0).ln();
                ln_fk1 = ln_fk;
                ln_fk += kf.ln();
            }
            let kf = k as f64;
            let ln_w = ln_f2k1 - ln_fk - ln_fk1 + (kf - 1.0) * ln_p + kf * ln_q - (2.0 * kf - 1.0).ln();
            batch.push((k, ln_w.exp(), ln_f2k2));
        }
        let integrals: Vec<f64> = batch
            .par_iter()
            .map(|&(k, _, lg)| d.gamma_mean(2 * k - 1, lg, m.lambda, 0.0).value)
            .collect();
        for (i, (&(k, w, _), &integral)) in batch.iter().zip(&integrals).enumerate() {
            partial_w += w;
            value += w * integral;
            let next = integrals.get(i + 1).copied().unwrap_or(integral);
            let tail = next * (total - partial_w).max(0.0);
            if tail <= tol {
                return Ok(SeriesSum {
                    value,
                    terms: k as usize,
                    tail_bound: tail,
                });
            }
        }
        if k as usize >= SERIES_CAP {
            return Err(Error::SeriesDivergence { terms: k as usize });
        }
    }
}

/// `α_n = E_{uⁱ}[δ(τ_{uⁱ⁻ⁿ})]` for `n = 0..n_states−1`, evaluated on the
/// truncated chain with the target at the bottom level.
pub fn alpha_table(m: &PutModel, tol: f64) -> Result<Vec<f64>> {
    let chain = build_put_chain(m)?;
    let n = chain.len();
    let target = StoppingRegion::from_indices(n, &[0])?;
    let mut unit = vec![0.0; n];
    unit[0] = 1.0;
    Ok(Valuator::new(&chain, &m.discount())
        .hitting_value_with_payoff(&target, &unit, 0.0, tol)?
        .values)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Threshold {
    pub alpha1: f64,
    /// `log_u((1−α₁)K/(u−α₁))`.
    pub exponent: f64,
    pub n0: i64,
    /// `⌈log_u((1−α₁)K)⌉ − 1`.
    pub m0: i64,
    /// `f(u^{n₀})/f(u^{n₀−1}) > α₁ ≥ f(u^{n₀+1})/f(u^{n₀})` with `f = (K−·)⁺`.
    pub sandwich_holds: bool,
}

/// Exercise threshold `n₀` from a given `α₁`.
pub fn threshold_from_alpha(m: &PutModel, alpha1: f64) -> Result<Threshold> {
    if !(alpha1 > 0.0 && alpha1 < 1.0) {
        return Err(Error::InvalidParameter(format!("α₁ must lie in (0,1), got {alpha1}")));
    }
    let ln_u = m.u.ln();
    let exponent = ((1.0 - alpha1) * m.strike / (m.u - alpha1)).ln() / ln_u;
    if (exponent - exponent.round()).abs() <= 1e-9 {
        return Err(Error::DegenerateThreshold { value: exponent });
    }
    let n0 = exponent.ceil() as i64;
    let m0 = (((1.0 - alpha1) * m.strike).ln() / ln_u).ceil() as i64 - 1;
    let f = |i: i64| m.payoff_at_level(i);
    let sandwich_holds = f(n0) > 0.0 && f(n0) / f(n0 - 1) > alpha1 && alpha1 >= f(n0 + 1) / f(n0);
    Ok(Threshold {
        alpha1,
        exponent,
        n0,
        m0,
        sandwich_holds,
    })
}

/// `n₀ = ⌈log_u((1−α₁)K/(u−α₁))⌉` with `α₁` from the series.
pub fn threshold_n0(m: &PutModel) -> Result<Threshold> {
    let alpha = alpha1_series(m, 1e-12)?;
    threshold_from_alpha(m, alpha.value)
}

/// `K − uⁱ > (K − u^m)·α_{i−m}` for every truncated level `m < i`.
pub fn s1_membership_check(m: &PutModel, level: i64, tol: f64) -> Result<bool> {
    if m.index(level).is_none() {
        return Err(Error::InvalidParameter(format!(
            "level {level} outside the truncation {}..={}",
            m.i_min, m.i_max
        )));
    }
    if m.price_at_level(level) >= m.strike {
        return Err(Error::InvalidParameter(format!("level {level} is not in the money")));
    }
    let alphas = alpha_table(m, tol)?;
    Ok(s1_member_from_table(m, level, &alphas))
}

fn s1_member_from_table(m: &PutModel, level: i64, alphas: &[f64]) -> bool {
    let own = m.payoff_at_level(level);
    (m.i_min..level).all(|lm| own > m.payoff_at_level(lm) * alphas[(level - lm) as usize])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Precommitment {
    /// Chain indices of `A_0`.
    pub region: Vec<usize>,
    /// `U(y)` on the finer grid.
    pub value: Vec<f64>,
    pub dt: f64,
    pub horizon: f64,
    /// `max_y |U_dt(y) − U_{dt/2}(y)|`.
    pub richardson_change: f64,
}

/// Backward induction for `W(t,y) = max(f(y), (1+βt)/(1+β(t+dt))·E[W(t+dt, Y_dt)])`
/// with the exact one-step kernel `e^{Q·dt}` and `W(H,·) = f`.
fn precommitment_values(chain: &Chain, beta: f64, horizon: f64, dt: f64) -> Result<Vec<f64>> {
    let n = chain.len();
    let kernel = transition_matrix(chain, dt, 1e-15)?;
    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|x| {
            (0..n)
                .map(|y| (y, kernel[(x, y)]))
                .filter(|&(_, p)| p > 1e-17)
                .collect()
        })
        .collect();
    let steps = (horizon / dt).round() as usize;
    let payoff = chain.values();
    let mut w = payoff.to_vec();
    let mut next = vec![0.0; n];
    for s in (0..steps).rev() {
        let t = s as f64 * dt;
        let ratio = (1.0 + beta * t) / (1.0 + beta * (t + dt));
        for (x, row) in rows.iter().enumerate() {
            let e: f64 = row.iter().map(|&(y, p)| p * w[y]).sum();
            next[x] = payoff[x].max(ratio * e);
        }
        std::mem::swap(&mut w, &mut next);
    }
    Ok(w)
}

/// Pre-commitment value `U` and the time-0 stopping set
/// `A_0 = {y : f(y) > 0, f(y) ≥ U(y) − tol}`.
pub fn precommitment_region(m: &PutModel, horizon: f64, dt: f64, tol: f64) -> Result<Precommitment> {
    if !(dt > 0.0) || m.lambda * dt > 0.1 + 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "need 0 < λ·dt ≤ 0.1, got {}",
            m.lambda * dt
        )));
    }
    if !(1.0 / (1.0 + m.beta * horizon) < 1e-4) {
        return Err(Error::InvalidParameter(format!(
            "horizon {horizon} too short: δ(H) must be below 1e-4"
        )));
    }
    let chain = build_put_chain(m)?;
    let (coarse, fine) = rayon::join(
        || precommitment_values(&chain, m.beta, horizon, dt),
        || precommitment_values(&chain, m.beta, horizon, dt / 2.0),
    );
    let (coarse, fine) = (coarse?, fine?);
    let change = coarse.iter().zip(&fine).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let limit = 1e-3 * m.strike;
    if change > limit {
        return Err(Error::GridTooCoarse { change, limit });
    }
    let region = (0..chain.len())
        .filter(|&x| chain.value(x) > 0.0 && chain.value(x) >= fine[x] - tol)
        .collect();
    Ok(Precommitment {
        region,
        value: fine,
        dt: dt / 2.0,
        horizon,
        richardson_change: change,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExerciseComparison {
    /// Chain indices of `S_∞`.
    pub equilibrium_region: Vec<usize>,
    /// Chain indices of `A_0`.
    pub precommitment_region: Vec<usize>,
    pub containment_holds: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PutOptions {
    pub tol: Option<f64>,
    pub series_tol: f64,
    pub horizon: Option<f64>,
    pub dt: Option<f64>,
}

impl Default for PutOptions {
    fn default() -> Self {
        Self {
            tol: None,
            series_tol: 1e-12,
            horizon: None,
            dt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PutRow {
    pub level: i64,
    pub price: f64,
    pub payoff: f64,
    /// `J(y, S_∞)`.
    pub equilibrium_value: f64,
    /// `U(y)`.
    pub precommitment_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PutAnalysis {
    pub model: PutModel,
    pub alpha1: SeriesSum,
    pub threshold: Threshold,
    pub trace: IterationTrace,
    /// Highest level in `S_∞`.
    pub s_inf_top: Option<i64>,
    /// `S_∞ = {levels ≤ n₀}` on the truncated lattice.
    pub threshold_matches: bool,
    pub within_step_bound: bool,
    pub precommitment: Precommitment,
    pub comparison: ExerciseComparison,
    pub rows: Vec<PutRow>,
}

/// Full pipeline: series, threshold, iteration, pre-commitment and the
/// exercise-time comparison.
pub fn analyze_put(m: &PutModel, opts: &PutOptions) -> Result<PutAnalysis> {
    m.validate()?;
    let chain = build_put_chain(m)?;
    let d = m.discount();
    let tol = opts.tol.unwrap_or_else(|| default_tolerance(&chain));
    let alpha1 = alpha1_series(m, opts.series_tol)?;
    let threshold = threshold_from_alpha(m, alpha1.value)?;
    let trace = iterate_optimal(&chain, &d, tol)?;
    let s_inf = &trace.final_region;
    let s_inf_top = s_inf.iter().last().map(|j| m.level(j));
    let threshold_matches = (0..chain.len()).all(|j| s_inf.contains(j) == (m.level(j) <= threshold.n0));
    let within_step_bound = (trace.augmenting_steps() as i64) <= threshold.n0 - threshold.m0 + 1;

    let horizon = opts.horizon.unwrap_or(2e4 / m.beta);
    let dt = opts.dt.unwrap_or(DEFAULT_DT_LAMBDA / m.lambda);
    let precommitment = precommitment_region(m, horizon, dt, tol)?;
    let containment_holds = precommitment.region.iter().all(|&j| s_inf.contains(j));
    let comparison = ExerciseComparison {
        equilibrium_region: s_inf.indices(),
        precommitment_region: precommitment.region.clone(),
        containment_holds,
    };
    let j = Valuator::new(&chain, &d).hitting_value(s_inf, 0.0, 0.01 * tol)?;
    let rows = (0..chain.len())
        .map(|x| PutRow {
            level: m.level(x),
            price: m.price_at_level(m.level(x)),
            payoff: chain.value(x),
            equilibrium_value: j.values[x],
            precommitment_value: precommitment.value[x],
        })
        .collect();
    Ok(PutAnalysis {
        model: *m,
        alpha1,
        threshold,
        trace,
        s_inf_top,
        threshold_matches,
        within_step_bound,
        precommitment,
        comparison,
        rows,
    })
}
