use serde::Serialize;

use crate::ctmc::{is_irreducible, Chain};
use crate::discount::DiscountFn;
use crate::error::{Error, Result};
use crate::region::StoppingRegion;
use crate::valuation::{Valuator, ValueVector};

/// Default ε-grid for the numerical strong-equilibrium test.
pub const DEFAULT_EPS_GRID: [f64; 3] = [1e-2, 1e-3, 1e-4];

/// `1e-9 · C`, or `1e-12` when every state value is zero.
pub fn default_tolerance(chain: &Chain) -> f64 {
    let c = chain.max_value();
    if c > 0.0 {
        1e-9 * c
    } else {
        1e-12
    }
}

/// Accuracy requested from the valuation relative to the decision tolerance.
pub(crate) fn value_tolerance(tol: f64) -> f64 {
    0.01 * tol
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MildVerdict {
    pub holds: bool,
    /// `min_{x∉S} J(x,S) − x`; `+∞` when `S` covers every state.
    pub worst_gap: f64,
    pub worst_state: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeakVerdict {
    pub holds: bool,
    /// First-order gap at each stopped state, in region order.
    pub gaps: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StrongKind {
    Strong,
    WeakOnly,
    Indeterminate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StrongMethod {
    StrictFirstOrder,
    SecondOrderClosedForm,
    EpsilonGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateStrength {
    pub state: usize,
    pub verdict: StrongKind,
    pub method: StrongMethod,
    /// Second-order value (tier 2) or `x − delayed value` per ε (tier 3).
    pub evidence: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrongVerdict {
    pub verdict: StrongKind,
    /// The most demanding tier used at any state.
    pub method: StrongMethod,
    pub per_state: Vec<StateStrength>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Classification {
    pub region: StoppingRegion,
    pub mild: MildVerdict,
    pub weak: WeakVerdict,
    /// Evaluated only when the region is weak.
    pub strong: Option<StrongVerdict>,
    pub irreducibility_warning: bool,
    pub tol: f64,
    pub eps_grid: Vec<f64>,
}

impl Classification {
    pub fn is_mild(&self) -> bool {
        self.mild.holds
    }

    pub fn is_weak(&self) -> bool {
        self.weak.holds
    }

    pub fn is_strong(&self) -> bool {
        matches!(&self.strong, Some(s) if s.verdict == StrongKind::Strong)
    }
}

fn check_region(chain: &Chain, region: &StoppingRegion) -> Result<()> {
    if region.n_states() != chain.len() {
        return Err(Error::DimensionMismatch {
            rows: region.n_states(),
            cols: region.n_states(),
            states: chain.len(),
        });
    }
    Ok(())
}

fn mild_from_values(chain: &Chain, region: &StoppingRegion, j: &ValueVector, tol: f64) -> MildVerdict {
    let mut worst_gap = f64::INFINITY;
    let mut worst_state = None;
    for x in (0..chain.len()).filter(|&x| !region.contains(x)) {
        let gap = j.values[x] - chain.value(x);
        if gap < worst_gap {
            worst_gap = gap;
            worst_state = Some(x);
        }
    }
    MildVerdict {
        holds: worst_gap >= -tol,
        worst_gap,
        worst_state,
    }
}

fn gap_from_values(chain: &Chain, d: &DiscountFn, region: &StoppingRegion, j: &ValueVector, x: usize) -> f64 {
    let own = chain.value(x) * (chain.holding_rate(x) - d.slope_at_zero());
    let inflow: f64 = chain
        .jumps(x)
        .iter()
        .map(|&(y, q)| {
            if region.contains(y) {
                chain.value(y) * q
            } else {
                j.values[y] * q
            }
        })
        .sum();
    own - inflow
}

/// Mild iff `x ≤ J(x,S) + tol` for every `x ∉ S`.
pub fn is_mild(chain: &Chain, d: &DiscountFn, region: &StoppingRegion, tol: f64) -> Result<MildVerdict> {
    check_region(chain, region)?;
    let j = Valuator::new(chain, d).hitting_value(region, 0.0, value_tolerance(tol))?;
    Ok(mild_from_values(chain, region, &j, tol))
}

/// `x(λ_x − δ'(0)) − Σ_{y∈S∖{x}} y q_xy − Σ_{y∉S} J(y,S) q_xy` for `x ∈ S`.
pub fn first_order_gap(chain: &Chain, d: &DiscountFn, region: &StoppingRegion, x: usize, tol: f64) -> Result<f64> {
    check_region(chain, region)?;
    chain.check_state(x)?;
    if !region.contains(x) {
        return Err(Error::StateNotInRegion(x));
    }
    let j = Valuator::new(chain, d).hitting_value(region, 0.0, value_tolerance(tol))?;
    Ok(gap_from_values(chain, d, region, &j, x))
}

/// Mild and every first-order gap is at least `-tol`.
pub fn is_weak(chain: &Chain, d: &DiscountFn, region: &StoppingRegion, tol: f64) -> Result<WeakVerdict> {
    Ok(classify_with(&Valuator::new(chain, d), region, tol, &[])?.weak)
}

/// Three-tier strong-equilibrium test; `None` when the region is not weak.
pub fn is_strong(
    chain: &Chain,
    d: &DiscountFn,
    region: &StoppingRegion,
    tol: f64,
    eps_grid: &[f64],
) -> Result<Option<StrongVerdict>> {
    Ok(classify_with(&Valuator::new(chain, d), region, tol, eps_grid)?.strong)
}

/// `(δ''(0) − 2δ'(0)²)/(−δ'(0)) − (λ_a + λ_b)` for the two-state region
/// `{a,b}` when the first-order gap at `b` vanishes. Positive means a short
/// delay at `b` pays off, so the region is not strong.
pub fn two_state_second_order(a: f64, b: f64, lambda_a: f64, lambda_b: f64, d: &DiscountFn, tol: f64) -> Result<f64> {
    let residual = b * (lambda_b - d.slope_at_zero()) - a * lambda_b;
    if residual.abs() > tol {
        return Err(Error::FirstOrderNotCritical { residual });
    }
    Ok(d.second_order_threshold() - (lambda_a + lambda_b))
}

/// Full mild / weak / strong classification of `region`.
pub fn classify(
    chain: &Chain,
    d: &DiscountFn,
    region: &StoppingRegion,
    tol: f64,
    eps_grid: &[f64],
) -> Result<Classification> {
    classify_with(&Valuator::new(chain, d), region, tol, eps_grid)
}

pub(crate) fn classify_with(
    valuator: &Valuator<'_>,
    region: &StoppingRegion,
    tol: f64,
    eps_grid: &[f64],
) -> Result<Classification> {
    let chain = valuator.chain();
    let d = valuator.discount();
    check_region(chain, region)?;
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    if eps_grid.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::InvalidParameter("ε-grid entries must be positive".into()));
    }
    let vtol = value_tolerance(tol);
    let j = valuator.hitting_value(region, 0.0, vtol)?;
    let mild = mild_from_values(chain, region, &j, tol);
    let gaps: Vec<(usize, f64)> = region
        .iter()
        .map(|x| (x, gap_from_values(chain, d, region, &j, x)))
        .collect();
    let weak = WeakVerdict {
        holds: mild.holds && gaps.iter().all(|&(_, g)| g >= -tol),
        gaps,
    };
    let grid: &[f64] = if eps_grid.is_empty() {
        &DEFAULT_EPS_GRID
    } else {
        eps_grid
    };
    let strong = if weak.holds {
        let per_state = weak
            .gaps
            .iter()
            .map(|&(x, gap)| state_strength(valuator, region, x, gap, tol, grid))
            .collect::<Result<Vec<_>>>()?;
        let verdict = if per_state.iter().all(|s| s.verdict == StrongKind::Strong) {
            StrongKind::Strong
        } else if per_state.iter().any(|s| s.verdict == StrongKind::WeakOnly) {
            StrongKind::WeakOnly
        } else {
            StrongKind::Indeterminate
        };
        let method = per_state
            .iter()
            .map(|s| s.method)
            .max_by_key(|m| *m as u8)
            .unwrap_or(StrongMethod::StrictFirstOrder);
        Some(StrongVerdict {
            verdict,
            method,
            per_state,
        })
    } else {
        None
    };
    Ok(Classification {
        region: region.clone(),
        mild,
        weak,
        strong,
        irreducibility_warning: !is_irreducible(chain),
        tol,
        eps_grid: grid.to_vec(),
    })
}

fn state_strength(
    valuator: &Valuator<'_>,
    region: &StoppingRegion,
    x: usize,
    gap: f64,
    tol: f64,
    eps_grid: &[f64],
) -> Result<StateStrength> {
    let chain = valuator.chain();
    if gap > tol {
        return Ok(StateStrength {
            state: x,
            verdict: StrongKind::Strong,
            method: StrongMethod::StrictFirstOrder,
            evidence: vec![gap],
        });
    }
    if chain.len() == 2 && region.len() == 2 {
        let other = 1 - x;
        let so = two_state_second_order(
            chain.value(other),
            chain.value(x),
            chain.holding_rate(other),
            chain.holding_rate(x),
            valuator.discount(),
            tol,
        )?;
        if so != 0.0 {
            return Ok(StateStrength {
                state: x,
                verdict: if so < 0.0 {
                    StrongKind::Strong
                } else {
                    StrongKind::WeakOnly
                },
                method: StrongMethod::SecondOrderClosedForm,
                evidence: vec![so],
            });
        }
    }
    let value = chain.value(x);
    let diffs = eps_grid
        .iter()
        .map(|&eps| Ok(value - valuator.delayed_value(region, x, eps, value_tolerance(tol))?))
        .collect::<Result<Vec<f64>>>()?;
    let verdict = if diffs.iter().all(|&v| v > tol) {
        StrongKind::Strong
    } else if diffs.iter().any(|&v| v < -tol) && diffs.iter().all(|&v| v <= tol) {
        StrongKind::WeakOnly
    } else {
        StrongKind::Indeterminate
    };
    Ok(StateStrength {
        state: x,
        verdict,
        method: StrongMethod::EpsilonGrid,
        evidence: diffs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctmc::tests::example_chain;

    fn region(n: usize, idx: &[usize]) -> StoppingRegion {
        StoppingRegion::from_indices(n, idx).unwrap()
    }

    #[test]
    fn whole_space_is_always_mild() {
        let chain = example_chain();
        let d = DiscountFn::hyperbolic(3.0).unwrap();
        assert!(is_mild(&chain, &d, &StoppingRegion::full(4), 1e-7).unwrap().holds);
    }

    #[test]
    fn four_state_limit_is_strong() {
        let chain = example_chain();
        let d = DiscountFn::hyperbolic(3.0).unwrap();
        let c = classify(&chain, &d, &region(4, &[1, 2, 3]), 1e-7, &[]).unwrap();
        assert!(c.is_mild() && c.is_weak() && c.is_strong());
        assert_eq!(c.strong.unwrap().method, StrongMethod::StrictFirstOrder);
        let gap4 = first_order_gap(&chain, &d, &region(4, &[1, 2, 3]), 3, 1e-7).unwrap();
        assert!(gap4 > 0.0);
    }

    #[test]
    fn absorbing_gap_is_minus_x_times_slope() {
        let chain = Chain::from_rates(vec![3.0, 1.0], &[vec![0.0, 0.0], vec![2.0, 0.0]]).unwrap();
        let d = DiscountFn::hyperbolic(1.5).unwrap();
        let g = first_order_gap(&chain, &d, &region(2, &[0]), 0, 1e-9).unwrap();
        assert_eq!(g, 3.0 * 1.5);
    }

    #[test]
    fn gap_requires_membership() {
        let chain = example_chain();
        let d = DiscountFn::hyperbolic(3.0).unwrap();
        assert_eq!(
            first_order_gap(&chain, &d, &region(4, &[3]), 0, 1e-7),
            Err(Error::StateNotInRegion(0))
        );
    }

    #[test]
    fn second_order_thresholds() {
        let beta = 4.0;
        let lb = 1.0;
        let la = 0.5;
        let a = 10.0;
        let h = DiscountFn::hyperbolic(beta).unwrap();
        let b = a * lb / (lb + beta);
        let v = two_state_second_order(a, b, la, lb, &h, 1e-9).unwrap();
        assert!((v + (la + lb)).abs() < 1e-12);

        let g = DiscountFn::generalized_hyperbolic(beta, 0.5).unwrap();
        let b = a * 2.0 * lb / (2.0 * lb + beta);
        let v = two_state_second_order(a, b, la, lb, &g, 1e-9).unwrap();
        assert!((v - (beta / 2.0 - (la + lb))).abs() < 1e-12);

        let e = DiscountFn::exponential(beta).unwrap();
        let b = a * lb / (lb + beta);
        let v = two_state_second_order(a, b, la, lb, &e, 1e-9).unwrap();
        assert!((v - (-beta - (la + lb))).abs() < 1e-12);

        assert!(matches!(
            two_state_second_order(a, 0.5 * a, la, lb, &h, 1e-9),
            Err(Error::FirstOrderNotCritical { .. })
        ));
    }

    #[test]
    fn containment_is_structural() {
        let chain = example_chain();
        let d = DiscountFn::hyperbolic(3.0).unwrap();
        for mask in 1..16u64 {
            let c = classify(&chain, &d, &StoppingRegion::from_mask(4, mask), 1e-7, &[]).unwrap();
            assert!(!c.is_weak() || c.is_mild());
            assert!(!c.is_strong() || c.is_weak());
        }
    }

    #[test]
    fn gap_matches_delay_slope() {
        // x − delayed value ≈ gap·ε for small ε
        let chain = example_chain();
        let d = DiscountFn::hyperbolic(3.0).unwrap();
        let s = region(4, &[1, 2, 3]);
        let v = Valuator::new(&chain, &d);
        for x in [1usize, 2, 3] {
            let gap = first_order_gap(&chain, &d, &s, x, 1e-9).unwrap();
            let e1 = 1e-4;
            let e2 = 5e-5;
            let f1 = chain.value(x) - v.delayed_value(&s, x, e1, 1e-13).unwrap();
            let f2 = chain.value(x) - v.delayed_value(&s, x, e2, 1e-13).unwrap();
            // Richardson-corrected slope at zero
            let slope = 2.0 * f2 / e2 - f1 / e1;
            assert!((slope - gap).abs() <= 0.05 * gap.abs(), "x={x}: {slope} vs {gap}");
        }
    }
}
