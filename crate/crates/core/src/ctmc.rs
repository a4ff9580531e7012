//! Finite continuous-time Markov chains whose state values are the payoffs
//! collected on stopping.
//!
//! A [`Chain`] is immutable once built. Alongside the dense generator it keeps
//! the holding rates `λ_x = -q_xx` and a sparse list of outgoing jumps per
//! state, which the valuation code and the path simulator iterate over.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{Error, Result};
use crate::region::StoppingRegion;

/// Relative tolerance on generator row sums.
const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct Chain {
    values: Vec<f64>,
    generator: DMatrix<f64>,
    labels: Vec<String>,
    holding_rates: Vec<f64>,
    jumps: Vec<Vec<(usize, f64)>>,
}

/// Builds a chain from state values and a generator.
///
/// If every diagonal entry is exactly zero the matrix is read as a table of
/// off-diagonal rates and the diagonal is reconstructed as `-Σ_{y≠x} q_xy`.
pub fn build_chain(states: Vec<f64>, generator: DMatrix<f64>) -> Result<Chain> {
    Chain::new(states, generator)
}

impl Chain {
    pub fn new(values: Vec<f64>, mut generator: DMatrix<f64>) -> Result<Self> {
        let n = values.len();
        if generator.nrows() != n || generator.ncols() != n {
            return Err(Error::DimensionMismatch {
                rows: generator.nrows(),
                cols: generator.ncols(),
                states: n,
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "state values" });
        }
        if generator.iter().any(|q| !q.is_finite()) {
            return Err(Error::NonFinite { what: "generator" });
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, &v)| v < 0.0) {
            return Err(Error::NegativeStateValue { index, value });
        }
        for x in 0..n {
            for y in 0..n {
                if x != y && generator[(x, y)] < 0.0 {
                    return Err(Error::NegativeRate {
                        from: x,
                        to: y,
                        rate: generator[(x, y)],
                    });
                }
            }
        }
        if (0..n).all(|x| generator[(x, x)] == 0.0) {
            for x in 0..n {
                let out: f64 = (0..n).filter(|&y| y != x).map(|y| generator[(x, y)]).sum();
                generator[(x, x)] = -out;
            }
        }
        let scale = generator.iter().fold(0.0f64, |m, q| m.max(q.abs()));
        for x in 0..n {
            let sum: f64 = generator.row(x).iter().sum();
            if sum.abs() > ROW_SUM_TOL * scale.max(f64::MIN_POSITIVE) {
                return Err(Error::RowSumViolation { row: x, sum });
            }
        }
        let jumps: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|x| {
                (0..n)
                    .filter(|&y| y != x && generator[(x, y)] > 0.0)
                    .map(|y| (y, generator[(x, y)]))
                    .collect()
            })
            .collect();
        let holding_rates = jumps.iter().map(|row| row.iter().map(|&(_, q)| q).sum()).collect();
        let labels = (1..=n).map(|i| format!("x{i}")).collect();
        Ok(Self {
            values,
            generator,
            labels,
            holding_rates,
            jumps,
        })
    }

    /// Builds a chain from a table of off-diagonal rates; the diagonal of
    /// `rates` is ignored.
    pub fn from_rates(values: Vec<f64>, rates: &[Vec<f64>]) -> Result<Self> {
        let n = values.len();
        if rates.len() != n || rates.iter().any(|r| r.len() != n) {
            return Err(Error::DimensionMismatch {
                rows: rates.len(),
                cols: rates.first().map_or(0, Vec::len),
                states: n,
            });
        }
        let mut q = DMatrix::zeros(n, n);
        for x in 0..n {
            for y in 0..n {
                if x != y {
                    q[(x, y)] = rates[x][y];
                }
            }
        }
        Self::new(values, q)
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::InvalidParameter(format!(
                "{} labels for {} states",
                labels.len(),
                self.len()
            )));
        }
        self.labels = labels;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, x: usize) -> f64 {
        self.values[x]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn generator(&self) -> &DMatrix<f64> {
        &self.generator
    }

    pub fn rate(&self, x: usize, y: usize) -> f64 {
        self.generator[(x, y)]
    }

    /// Total jump rate `λ_x` out of state `x`.
    pub fn holding_rate(&self, x: usize) -> f64 {
        self.holding_rates[x]
    }

    pub fn holding_rates(&self) -> &[f64] {
        &self.holding_rates
    }

    /// `sup_x λ_x`, the natural uniformization rate.
    pub fn max_rate(&self) -> f64 {
        self.holding_rates.iter().copied().fold(0.0, f64::max)
    }

    /// `C = max_x x`.
    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Outgoing jumps `(y, q_xy)` with `q_xy > 0`.
    pub fn jumps(&self, x: usize) -> &[(usize, f64)] {
        &self.jumps[x]
    }

    pub fn is_absorbing(&self, x: usize) -> bool {
        self.jumps[x].is_empty()
    }

    /// True if every jump moves to an adjacent index (birth–death structure).
    pub fn is_skip_free(&self) -> bool {
        self.jumps
            .iter()
            .enumerate()
            .all(|(x, row)| row.iter().all(|&(y, _)| x.abs_diff(y) == 1))
    }

    pub fn check_state(&self, x: usize) -> Result<()> {
        if x < self.len() {
            Ok(())
        } else {
            Err(Error::StateOutOfRange {
                index: x,
                len: self.len(),
            })
        }
    }
}

/// True iff the graph of strictly positive off-diagonal rates is strongly
/// connected.
pub fn is_irreducible(chain: &Chain) -> bool {
    let n = chain.len();
    if n <= 1 {
        return true;
    }
    let forward = reach(n, |x| chain.jumps(x).iter().map(|&(y, _)| y).collect(), 0);
    if forward.iter().any(|&r| !r) {
        return false;
    }
    let mut reverse = vec![Vec::new(); n];
    for x in 0..n {
        for &(y, _) in chain.jumps(x) {
            reverse[y].push(x);
        }
    }
    reach(n, |x| reverse[x].clone(), 0).into_iter().all(|r| r)
}

fn reach(n: usize, next: impl Fn(usize) -> Vec<usize>, start: usize) -> Vec<bool> {
    let mut seen = vec![false; n];
    let mut stack = vec![start];
    seen[start] = true;
    while let Some(x) = stack.pop() {
        for y in next(x) {
            if !seen[y] {
                seen[y] = true;
                stack.push(y);
            }
        }
    }
    seen
}

/// Generator restricted to the complement of a stopping region.
#[derive(Debug, Clone)]
pub struct SubGenerator {
    /// Chain indices of the continuation states, in increasing order.
    pub states: Vec<usize>,
    pub matrix: DMatrix<f64>,
}

pub fn sub_generator(chain: &Chain, region: &StoppingRegion) -> Result<SubGenerator> {
    let states: Vec<usize> = (0..chain.len()).filter(|&x| !region.contains(x)).collect();
    if states.is_empty() {
        return Err(Error::EmptyContinuation);
    }
    let m = states.len();
    let matrix = DMatrix::from_fn(m, m, |i, j| chain.rate(states[i], states[j]));
    Ok(SubGenerator { states, matrix })
}

/// Poisson probabilities `P(N = k)` for `N ~ Poisson(mean)`, truncated once
/// the remaining tail mass is below `tail`. Returns `None` if more than
/// `cap` terms would be needed.
pub(crate) fn poisson_weights(mean: f64, tail: f64, cap: usize) -> Option<Vec<f64>> {
    if mean == 0.0 {
        return Some(vec![1.0]);
    }
    let log_mean = mean.ln();
    let mut log_w = -mean;
    let mut weights = Vec::new();
    let mut k = 0usize;
    loop {
        let w = log_w.exp();
        weights.push(w);
        let next = k + 1;
        // Past the mode the ratio of consecutive terms is mean/(k+1) < 1, so
        // the tail is dominated by a geometric series.
        if next as f64 > mean {
            let ratio = mean / (next as f64 + 1.0);
            let next_w = (log_w + log_mean - (next as f64).ln()).exp();
            if next_w / (1.0 - ratio) <= tail {
                return Some(weights);
            }
        }
        if next >= cap {
            return None;
        }
        log_w += log_mean - (next as f64).ln();
        k = next;
    }
}

/// `e^{Qt}` by uniformization: `Σ_k Pois(k; Λt) Pᵏ` with `P = I + Q/Λ`.
pub fn transition_matrix(chain: &Chain, t: f64, tol: f64) -> Result<DMatrix<f64>> {
    if t < 0.0 || !t.is_finite() {
        return Err(Error::NegativeTime(t));
    }
    let n = chain.len();
    let rate = chain.max_rate();
    if t == 0.0 || rate == 0.0 {
        return Ok(DMatrix::identity(n, n));
    }
    let tail = tol.min(1e-14);
    let weights = poisson_weights(rate * t, tail, 5_000_000).ok_or_else(|| Error::ToleranceUnreachable {
        tol,
        reason: format!("uniformization needs more than 5e6 terms at rate·t = {}", rate * t),
    })?;
    let kernel = DMatrix::identity(n, n) + chain.generator() / rate;
    let mut power = DMatrix::identity(n, n);
    let mut out = DMatrix::zeros(n, n);
    for (k, w) in weights.iter().enumerate() {
        if k > 0 {
            power = &power * &kernel;
        }
        out += &power * *w;
    }
    Ok(out)
}

/// A right-continuous piecewise-constant realization of the chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub jump_times: Vec<f64>,
    /// `states[0]` is the initial state; `states[k]` is occupied from
    /// `jump_times[k-1]` on.
    pub states: Vec<usize>,
    pub horizon: f64,
}

impl Path {
    /// State occupied at time `t`.
    pub fn state_at(&self, t: f64) -> usize {
        let k = self.jump_times.partition_point(|&s| s <= t);
        self.states[k]
    }

    /// Length of the first sojourn, `horizon` if no jump occurred.
    pub fn first_holding_time(&self) -> f64 {
        self.jump_times.first().copied().unwrap_or(self.horizon)
    }
}

/// Draws the next state after leaving `x`.
pub(crate) fn sample_jump<R: Rng>(chain: &Chain, x: usize, rng: &mut R) -> usize {
    let row = chain.jumps(x);
    let mut u = rng.random::<f64>() * chain.holding_rate(x);
    for &(y, q) in row {
        if u < q {
            return y;
        }
        u -= q;
    }
    row.last().expect("non-absorbing state").0
}

pub(crate) fn sample_holding<R: Rng>(chain: &Chain, x: usize, rng: &mut R) -> f64 {
    let rate = chain.holding_rate(x);
    if rate == 0.0 {
        f64::INFINITY
    } else {
        Exp::new(rate).expect("positive rate").sample(rng)
    }
}

/// Exact (Gillespie) simulation up to `horizon`; deterministic given `seed`.
pub fn simulate_path(chain: &Chain, start: usize, horizon: f64, seed: u64) -> Result<Path> {
    chain.check_state(start)?;
    if !(horizon > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = 0.0;
    let mut x = start;
    let mut path = Path {
        jump_times: Vec::new(),
        states: vec![start],
        horizon,
    };
    loop {
        t += sample_holding(chain, x, &mut rng);
        if t > horizon {
            return Ok(path);
        }
        x = sample_jump(chain, x, &mut rng);
        path.jump_times.push(t);
        path.states.push(x);
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn example_chain() -> Chain {
        Chain::from_rates(
            vec![10.0, 40.0, 46.0, 100.0],
            &[
                vec![0.0, 1.0, 1.0, 1.0],
                vec![0.0, 0.0, 0.0, 1.0],
                vec![0.0, 0.4, 0.0, 1.6],
                vec![1.0, 1.0, 1.0, 0.0],
            ],
        )
        .unwrap()
    }

    #[test]
    fn full_generator_is_accepted() {
        let q = DMatrix::from_row_slice(
            4,
            4,
            &[
                -3.0, 1.0, 1.0, 1.0, 0.0, -1.0, 0.0, 1.0, 0.0, 0.4, -2.0, 1.6, 1.0, 1.0, 1.0, -3.0,
            ],
        );
        let chain = build_chain(vec![10.0, 40.0, 46.0, 100.0], q).unwrap();
        assert_eq!(chain.holding_rates(), &[3.0, 1.0, 2.0, 3.0]);
        assert_eq!(chain.max_value(), 100.0);
    }

    #[test]
    fn diagonal_is_reconstructed_from_rates() {
        let chain = example_chain();
        assert_eq!(chain.generator()[(2, 2)], -2.0);
        assert_eq!(chain.labels()[3], "x4");
    }

    #[test]
    fn singleton_absorbing_chain() {
        let chain = build_chain(vec![1.0], DMatrix::zeros(1, 1)).unwrap();
        assert_eq!(chain.holding_rate(0), 0.0);
        assert!(chain.is_absorbing(0));
        assert!(is_irreducible(&chain));
    }

    #[test]
    fn contract_violations() {
        let q = DMatrix::from_row_slice(2, 2, &[-1.0, 1.5, 1.0, -1.0]);
        assert!(matches!(
            build_chain(vec![1.0, 2.0], q),
            Err(Error::RowSumViolation { row: 0, .. })
        ));
        let q = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 1.0, -1.0]);
        assert!(matches!(
            build_chain(vec![1.0, 2.0], q),
            Err(Error::NegativeRate { from: 0, to: 1, .. })
        ));
        let q = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]);
        assert!(matches!(
            build_chain(vec![1.0, -2.0], q.clone()),
            Err(Error::NegativeStateValue { index: 1, .. })
        ));
        assert!(matches!(
            build_chain(vec![1.0], q),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn irreducibility() {
        assert!(is_irreducible(&example_chain()));
        let one_way = Chain::from_rates(vec![1.0, 2.0], &[vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        assert!(!is_irreducible(&one_way));
        let two = Chain::from_rates(vec![1.0, 2.0], &[vec![0.0, 0.3], vec![2.0, 0.0]]).unwrap();
        assert!(is_irreducible(&two));
    }

    #[test]
    fn sub_generator_extraction() {
        let chain = example_chain();
        let s = StoppingRegion::from_indices(4, &[3]).unwrap();
        let sub = sub_generator(&chain, &s).unwrap();
        assert_eq!(sub.states, vec![0, 1, 2]);
        assert_eq!(sub.matrix[(2, 1)], 0.4);
        assert_eq!(sub.matrix[(0, 0)], -3.0);
        assert!(matches!(
            sub_generator(&chain, &StoppingRegion::full(4)),
            Err(Error::EmptyContinuation)
        ));
        let all = sub_generator(&chain, &StoppingRegion::empty(4)).unwrap();
        assert_eq!(&all.matrix, chain.generator());
    }

    #[test]
    fn transition_matrix_at_zero_is_identity() {
        let p = transition_matrix(&example_chain(), 0.0, 1e-12).unwrap();
        assert_eq!(p, DMatrix::identity(4, 4));
        assert!(matches!(
            transition_matrix(&example_chain(), -1.0, 1e-12),
            Err(Error::NegativeTime(_))
        ));
    }

    #[test]
    fn two_state_transition_matches_closed_form() {
        let (la, lb) = (0.7, 1.9);
        let chain = Chain::from_rates(vec![2.0, 1.0], &[vec![0.0, la], vec![lb, 0.0]]).unwrap();
        for &t in &[1e-3, 0.1, 1.0, 7.5] {
            let p = transition_matrix(&chain, t, 1e-14).unwrap();
            let ba = lb / (la + lb) * (1.0 - (-(la + lb) * t).exp());
            assert!((p[(1, 0)] - ba).abs() < 1e-13, "t={t}");
            for r in 0..2 {
                assert!((p.row(r).sum() - 1.0).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn poisson_weights_sum_to_one() {
        for &m in &[0.0, 0.3, 12.0, 900.0] {
            let w = poisson_weights(m, 1e-14, 1_000_000).unwrap();
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12, "mean {m}");
        }
        assert!(poisson_weights(1e6, 1e-14, 100).is_none());
    }

    #[test]
    fn simulation_is_deterministic() {
        let chain = example_chain();
        let a = simulate_path(&chain, 1, 50.0, 7).unwrap();
        let b = simulate_path(&chain, 1, 50.0, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.jump_times.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(a.states.len(), a.jump_times.len() + 1);
        assert_eq!(a.state_at(0.0), 1);
    }

    #[test]
    fn absorbing_singleton_never_jumps() {
        let chain = build_chain(vec![1.0], DMatrix::zeros(1, 1)).unwrap();
        let p = simulate_path(&chain, 0, 10.0, 1).unwrap();
        assert!(p.jump_times.is_empty());
        assert_eq!(p.first_holding_time(), 10.0);
    }
}
