use serde::Serialize;

use super::classify::{classify, Classification};
use crate::ctmc::Chain;
use crate::discount::DiscountFn;
use crate::error::{Error, Result};
use crate::region::StoppingRegion;

/// Relative tolerance for deciding that `b/a` sits on a critical ratio.
pub const RATIO_TOL: f64 = 1e-9;

/// Regime of the two-state problem with values `a > b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TwoStateCase {
    /// `b/a > E_b[δ(T_b)]`: `{a}` is not mild and `{a,b}` is the only mild region.
    OnlyAb,
    /// `b/a = E_b[δ(T_b)]`: `{a}` and `{a,b}` are both optimal mild.
    I,
    /// `b/a < λ_b/(λ_b − δ'(0))`: `{a}` is the unique optimal mild region,
    /// `{a,b}` is mild but not weak.
    Ii,
    /// `λ_b/(λ_b − δ'(0)) < b/a < E_b[δ(T_b)]`: `{a,b}` is weak and strong but
    /// not optimal.
    Iii,
    /// `b/a = λ_b/(λ_b − δ'(0))`: `{a,b}` is weak; strong iff the
    /// second-order value is negative.
    Iv,
}

impl TwoStateCase {
    pub fn label(&self) -> &'static str {
        match self {
            Self::OnlyAb => "only-ab",
            Self::I => "i",
            Self::Ii => "ii",
            Self::Iii => "iii",
            Self::Iv => "iv",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RegionVerdict {
    pub mild: bool,
    pub weak: bool,
    pub strong: bool,
}

impl From<&Classification> for RegionVerdict {
    fn from(c: &Classification) -> Self {
        Self {
            mild: c.is_mild(),
            weak: c.is_weak(),
            strong: c.is_strong(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TwoStateReport {
    pub case: TwoStateCase,
    pub ratio: f64,
    /// `E_b[δ(T_b)]`.
    pub expected_discount: f64,
    /// `λ_b/(λ_b − δ'(0))`.
    pub critical_ratio: f64,
    pub second_order: Option<f64>,
    /// Closed-form verdicts for `{a}` and `{a,b}`.
    pub closed_form: [RegionVerdict; 2],
    /// Generic numeric classifier on the same regions.
    pub numeric: [RegionVerdict; 2],
    pub agree: bool,
}

/// Closed-form analysis of the chain `a ⇄ b` (state 0 = `a`, state 1 = `b`)
/// cross-checked against the generic classifier.
pub fn classify_two_state(
    a: f64,
    b: f64,
    lambda_a: f64,
    lambda_b: f64,
    d: &DiscountFn,
    tol: f64,
) -> Result<TwoStateReport> {
    if !(a > b && b > 0.0) {
        return Err(Error::ParameterOrderViolation { a, b });
    }
    for rate in [lambda_a, lambda_b] {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::NonpositiveRate(rate));
        }
    }
    let ratio = b / a;
    let e = d.expected_discount_of_exponential(lambda_b, 0.0)?;
    let c = d.exponential_bound(lambda_b);
    let on = |target: f64| (ratio - target).abs() <= RATIO_TOL * target;

    let singleton_mild = ratio <= e || on(e);
    let singleton = RegionVerdict {
        mild: singleton_mild,
        weak: singleton_mild,
        strong: singleton_mild,
    };
    let mut second_order = None;
    let both = if on(c) {
        let so = d.second_order_threshold() - (lambda_a + lambda_b);
        second_order = Some(so);
        RegionVerdict {
            mild: true,
            weak: true,
            strong: so < 0.0,
        }
    } else {
        RegionVerdict {
            mild: true,
            weak: ratio > c,
            strong: ratio > c,
        }
    };
    let case = if on(e) {
        TwoStateCase::I
    } else if ratio > e {
        TwoStateCase::OnlyAb
    } else if on(c) {
        TwoStateCase::Iv
    } else if ratio < c {
        TwoStateCase::Ii
    } else {
        TwoStateCase::Iii
    };

    let chain = Chain::from_rates(vec![a, b], &[vec![0.0, lambda_a], vec![lambda_b, 0.0]])?;
    let numeric = [
        RegionVerdict::from(&classify(&chain, d, &StoppingRegion::from_mask(2, 0b01), tol, &[])?),
        RegionVerdict::from(&classify(&chain, d, &StoppingRegion::full(2), tol, &[])?),
    ];
    let closed_form = [singleton, both];
    Ok(TwoStateReport {
        case,
        ratio,
        expected_discount: e,
        critical_ratio: c,
        second_order,
        closed_form,
        numeric,
        agree: closed_form == numeric,
    })
}
