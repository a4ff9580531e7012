use std::collections::HashMap;

use rayon::prelude::*;
use serde::Serialize;

use super::classify::value_tolerance;
use crate::ctmc::Chain;
use crate::discount::DiscountFn;
use crate::error::{Error, Result};
use crate::region::StoppingRegion;
use crate::valuation::{Valuator, ValueVector};

/// Largest number of free states the subset search will enumerate.
pub const ENUMERATION_LIMIT: usize = 20;
/// Largest chain [`enumerate_mild`] accepts.
pub const MILD_ENUMERATION_LIMIT: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BestResponse {
    /// `sup J(x,S)` over admissible nonempty `S`; 0 if there is none.
    pub sup_value: f64,
    pub argmax: Option<StoppingRegion>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AddedState {
    pub state: usize,
    pub value: f64,
    pub sup: f64,
    pub argmax: Option<StoppingRegion>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationStep {
    /// `S_n`.
    pub region: StoppingRegion,
    /// Best-response sup for each state outside `S_n`, `None` inside.
    /// Exact to the valuation tolerance whenever it is within `tol` of the
    /// state's value; otherwise a lower bound that is certainly below it.
    pub sups: Vec<Option<f64>>,
    /// States with `x > sup + tol`; they form `S_{n+1} ∖ S_n`.
    pub added: Vec<AddedState>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationTrace {
    pub steps: Vec<IterationStep>,
    pub final_region: StoppingRegion,
    pub tol: f64,
    /// Whether the nearest-neighbour reduction for birth–death chains was used.
    pub skip_free: bool,
}

impl IterationTrace {
    /// Number of steps that enlarged the region.
    pub fn augmenting_steps(&self) -> usize {
        self.steps.iter().filter(|s| !s.added.is_empty()).count()
    }

    /// `S_0, S_1, …, S_∞`.
    pub fn regions(&self) -> Vec<&StoppingRegion> {
        self.steps.iter().map(|s| &s.region).collect()
    }
}

/// Regions whose values are needed for the best responses over supersets of
/// `base`, each paired with the states it is a candidate for.
///
/// On a birth–death chain `J(x,S)` only depends on the nearest members of `S`
/// on either side of `x`, so it suffices to try those neighbours inside each
/// gap of `base`. Other chains fall back to every superset.
fn candidate_regions(chain: &Chain, base: &StoppingRegion) -> Result<Vec<(StoppingRegion, Vec<usize>)>> {
    let n = chain.len();
    let free: Vec<usize> = (0..n).filter(|&x| !base.contains(x)).collect();
    if free.is_empty() {
        return Ok(Vec::new());
    }
    if chain.is_skip_free() {
        return Ok(neighbour_regions(n, base));
    }
    if free.len() - 1 > ENUMERATION_LIMIT {
        return Err(Error::EnumerationTooLarge {
            free: free.len() - 1,
            limit: ENUMERATION_LIMIT,
        });
    }
    let k = free.len();
    let out = (0u64..1 << k)
        .filter_map(|mask| {
            let mut region = base.clone();
            let mut targets = Vec::with_capacity(k);
            for (bit, &x) in free.iter().enumerate() {
                if mask >> bit & 1 == 1 {
                    region.insert(x);
                } else {
                    targets.push(x);
                }
            }
            (!region.is_empty() && !targets.is_empty()).then_some((region, targets))
        })
        .collect();
    Ok(out)
}

fn neighbour_regions(n: usize, base: &StoppingRegion) -> Vec<(StoppingRegion, Vec<usize>)> {
    let mut order: Vec<StoppingRegion> = Vec::new();
    let mut targets: HashMap<StoppingRegion, Vec<usize>> = HashMap::new();
    let mut lo = 0;
    while lo < n {
        if base.contains(lo) {
            lo += 1;
            continue;
        }
        let mut hi = lo;
        while hi + 1 < n && !base.contains(hi + 1) {
            hi += 1;
        }
        let below = lo.checked_sub(1);
        let above = (hi + 1 < n).then_some(hi + 1);
        let lefts: Vec<Option<usize>> = std::iter::once(below).chain((lo..=hi).map(Some)).collect();
        let rights: Vec<Option<usize>> = (lo..=hi).map(Some).chain(std::iter::once(above)).collect();
        for &l in &lefts {
            for &r in &rights {
                if l.is_none() && r.is_none() {
                    continue;
                }
                let first = l.map_or(lo, |l| l + 1).max(lo);
                let last = r.map_or(hi + 1, |r| r).min(hi + 1);
                if first >= last {
                    continue;
                }
                let mut region = base.clone();
                for m in [l, r].into_iter().flatten() {
                    region.insert(m);
                }
                let entry = targets.entry(region.clone()).or_insert_with(|| {
                    order.push(region);
                    Vec::new()
                });
                entry.extend(first..last);
            }
        }
        lo = hi + 1;
    }
    order
        .into_iter()
        .map(|r| {
            let t = targets.remove(&r).unwrap_or_default();
            (r, t)
        })
        .collect()
}

/// Best responses for every state outside `base`.
fn best_responses(valuator: &Valuator<'_>, base: &StoppingRegion, tol: f64) -> Result<Vec<Option<BestResponse>>> {
    let chain = valuator.chain();
    let candidates = candidate_regions(chain, base)?;
    let vtol = value_tolerance(tol);
    // A candidate whose value is certainly below x − tol cannot keep x out,
    // so its series only has to run until that is established.
    let values: Vec<ValueVector> = candidates
        .par_iter()
        .map(|(region, targets)| {
            let mut thresholds = vec![f64::INFINITY; chain.len()];
            for &x in targets {
                thresholds[x] = chain.value(x) - tol;
            }
            valuator.hitting_bounds(region, vtol, &thresholds)
        })
        .collect::<Result<_>>()?;
    let mut best: Vec<Option<BestResponse>> = (0..chain.len())
        .map(|x| {
            (!base.contains(x)).then_some(BestResponse {
                sup_value: 0.0,
                argmax: None,
            })
        })
        .collect();
    for ((region, targets), j) in candidates.iter().zip(&values) {
        for &x in targets {
            let b = best[x].as_mut().expect("targets lie outside the base");
            if b.argmax.is_none() || j.values[x] > b.sup_value {
                b.sup_value = j.values[x];
                b.argmax = Some(region.clone());
            }
        }
    }
    Ok(best)
}

/// `sup { J(x,S) : base ⊆ S ⊆ 𝕏∖{x}, S ≠ ∅ }`.
pub fn best_response_sup(
    chain: &Chain,
    d: &DiscountFn,
    x: usize,
    base: &StoppingRegion,
    tol: f64,
) -> Result<BestResponse> {
    chain.check_state(x)?;
    if base.contains(x) {
        return Err(Error::InvalidParameter(format!(
            "state {x} already belongs to the base region"
        )));
    }
    let valuator = Valuator::new(chain, d);
    let candidates: Vec<(StoppingRegion, Vec<usize>)> = candidate_regions(chain, base)?
        .into_iter()
        .filter(|(_, t)| t.contains(&x))
        .map(|(r, _)| (r, vec![x]))
        .collect();
    let vtol = value_tolerance(tol);
    let values: Vec<f64> = candidates
        .par_iter()
        .map(|(region, _)| valuator.hitting_value(region, 0.0, vtol).map(|j| j.values[x]))
        .collect::<Result<_>>()?;
    let mut best = BestResponse {
        sup_value: 0.0,
        argmax: None,
    };
    for ((region, _), v) in candidates.into_iter().zip(values) {
        if best.argmax.is_none() || v > best.sup_value {
            best = BestResponse {
                sup_value: v,
                argmax: Some(region),
            };
        }
    }
    Ok(best)
}

/// Runs `S_{n+1} = S_n ∪ {x ∉ S_n : x > sup J(x,S) + tol}` from `S_0 = ∅`
/// until it stalls.
pub fn iterate_optimal(chain: &Chain, d: &DiscountFn, tol: f64) -> Result<IterationTrace> {
    iterate_with(&Valuator::new(chain, d), tol)
}

pub(crate) fn iterate_with(valuator: &Valuator<'_>, tol: f64) -> Result<IterationTrace> {
    let chain = valuator.chain();
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let mut region = StoppingRegion::empty(chain.len());
    let mut steps = Vec::new();
    loop {
        let best = best_responses(valuator, &region, tol)?;
        let added: Vec<AddedState> = best
            .iter()
            .enumerate()
            .filter_map(|(x, b)| {
                let b = b.as_ref()?;
                (chain.value(x) > b.sup_value + tol).then(|| AddedState {
                    state: x,
                    value: chain.value(x),
                    sup: b.sup_value,
                    argmax: b.argmax.clone(),
                })
            })
            .collect();
        let next = added.iter().fold(region.clone(), |mut r, a| {
            r.insert(a.state);
            r
        });
        let done = added.is_empty();
        steps.push(IterationStep {
            region,
            sups: best.iter().map(|b| b.as_ref().map(|b| b.sup_value)).collect(),
            added,
        });
        region = next;
        if done {
            break;
        }
    }
    Ok(IterationTrace {
        steps,
        final_region: region,
        tol,
        skip_free: chain.is_skip_free(),
    })
}

fn mild_with_values(valuator: &Valuator<'_>, tol: f64) -> Result<Vec<(StoppingRegion, ValueVector)>> {
    let chain = valuator.chain();
    let n = chain.len();
    if n > MILD_ENUMERATION_LIMIT {
        return Err(Error::EnumerationTooLarge {
            free: n,
            limit: MILD_ENUMERATION_LIMIT,
        });
    }
    let vtol = value_tolerance(tol);
    let found: Vec<Option<(StoppingRegion, ValueVector)>> = (1u64..1 << n)
        .into_par_iter()
        .map(|mask| {
            let region = StoppingRegion::from_mask(n, mask);
            let j = valuator.hitting_value(&region, 0.0, vtol)?;
            let mild = (0..n).all(|x| region.contains(x) || chain.value(x) <= j.values[x] + tol);
            Ok(mild.then_some((region, j)))
        })
        .collect::<Result<_>>()?;
    let mut out: Vec<_> = found.into_iter().flatten().collect();
    out.sort_by_key(|(r, _)| (r.len(), r.mask()));
    Ok(out)
}

/// Every nonempty mild region, by increasing size.
pub fn enumerate_mild(chain: &Chain, d: &DiscountFn, tol: f64) -> Result<Vec<StoppingRegion>> {
    let valuator = Valuator::new(chain, d);
    Ok(mild_with_values(&valuator, tol)?.into_iter().map(|(r, _)| r).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominanceFailure {
    pub region: StoppingRegion,
    pub state: usize,
    /// `J(x,S) − J(x,S*)`.
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimalityReport {
    pub optimal: bool,
    pub smallest: bool,
    pub mild_regions: usize,
    pub dominance_failures: Vec<DominanceFailure>,
}

/// Checks `S*` against every mild region by brute force.
pub fn verify_optimal(chain: &Chain, d: &DiscountFn, candidate: &StoppingRegion, tol: f64) -> Result<OptimalityReport> {
    let valuator = Valuator::new(chain, d);
    if candidate.n_states() != chain.len() {
        return Err(Error::DimensionMismatch {
            rows: candidate.n_states(),
            cols: candidate.n_states(),
            states: chain.len(),
        });
    }
    let own = valuator.hitting_value(candidate, 0.0, value_tolerance(tol))?;
    if let Some(x) = (0..chain.len())
        .filter(|&x| !candidate.contains(x))
        .find(|&x| chain.value(x) > own.values[x] + tol)
    {
        return Err(Error::NotMild {
            state: x,
            excess: chain.value(x) - own.values[x],
        });
    }
    let mild = mild_with_values(&valuator, tol)?;
    let smallest = mild.iter().all(|(r, _)| candidate.is_subset(r));
    let mut dominance_failures = Vec::new();
    for (region, j) in &mild {
        for x in 0..chain.len() {
            let excess = j.values[x] - own.values[x];
            if excess > tol {
                dominance_failures.push(DominanceFailure {
                    region: region.clone(),
                    state: x,
                    excess,
                });
            }
        }
    }
    Ok(OptimalityReport {
        optimal: dominance_failures.is_empty(),
        smallest,
        mild_regions: mild.len(),
        dominance_failures,
    })
}
