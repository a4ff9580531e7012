use std::path::Path;

use equistop::putmodel::PutModel;
use equistop::{Chain, DiscountFn};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub chain: Option<ChainSpec>,
    pub two_state: Option<TwoStateSpec>,
    pub put: Option<PutSpec>,
    pub discount: Option<DiscountFn>,
    #[serde(default)]
    pub tolerances: Tolerances,
    pub grid: Option<GridSpec>,
    pub monte_carlo: Option<MonteCarloSpec>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSpec {
    pub label: Option<String>,
    pub value: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSpec {
    pub states: Vec<StateSpec>,
    /// Off-diagonal rates; a full generator is accepted as well.
    pub rates: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoStateSpec {
    pub a: f64,
    pub b: f64,
    pub lambda_a: f64,
    pub lambda_b: f64,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PutSpec {
    pub u: f64,
    pub p: f64,
    pub lambda: f64,
    pub beta: f64,
    #[serde(alias = "K")]
    pub strike: f64,
    pub i_min: Option<i64>,
    pub i_max: Option<i64>,
    pub horizon: Option<f64>,
    pub dt: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub tol: Option<f64>,
    pub eps_grid: Option<Vec<f64>>,
    pub series_tol: Option<f64>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub ratio_min: f64,
    pub ratio_max: f64,
    pub ratio_points: usize,
    pub lambda_b_min: f64,
    pub lambda_b_max: f64,
    pub lambda_b_points: usize,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloSpec {
    pub paths: usize,
    pub horizon: f64,
}

/// The chain a config describes, with its discount function.
pub enum Model {
    General {
        chain: Chain,
        discount: DiscountFn,
    },
    TwoState {
        spec: TwoStateSpec,
        chain: Chain,
        discount: DiscountFn,
    },
    Put {
        model: PutModel,
        spec: PutSpec,
        chain: Chain,
    },
}

impl Model {
    pub fn chain(&self) -> &Chain {
        match self {
            Self::General { chain, .. } | Self::TwoState { chain, .. } | Self::Put { chain, .. } => chain,
        }
    }

    pub fn discount(&self) -> DiscountFn {
        match self {
            Self::General { discount, .. } | Self::TwoState { discount, .. } => *discount,
            Self::Put { model, .. } => model.discount(),
        }
    }
}

pub fn load(path: &Path) -> Result<ModelConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        serde_json::from_str(&text).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))
    } else {
        toml::from_str(&text).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))
    }
}

impl ModelConfig {
    pub fn build(&self) -> Result<Model, CliError> {
        let forms = [self.chain.is_some(), self.two_state.is_some(), self.put.is_some()]
            .iter()
            .filter(|&&b| b)
            .count();
        if forms != 1 {
            return Err(CliError::Schema(format!(
                "exactly one of [chain], [two_state], [put] is required, found {forms}"
            )));
        }
        if let Some(tol) = self.tolerances.tol {
            if !(tol > 0.0) {
                return Err(CliError::Schema(format!("tolerances.tol must be positive, got {tol}")));
            }
        }
        if let Some(put) = self.put {
            let mut model = PutModel::new(put.u, put.p, put.lambda, put.beta, put.strike)?;
            if put.i_min.is_some() || put.i_max.is_some() {
                model = model.with_truncation(put.i_min.unwrap_or(model.i_min), put.i_max.unwrap_or(model.i_max))?;
            }
            if let Some(d) = self.discount {
                if d != model.discount() {
                    return Err(CliError::Schema(
                        "the put model discounts hyperbolically with its own beta; remove [discount]".into(),
                    ));
                }
            }
            let chain = equistop::putmodel::build_put_chain(&model)?;
            return Ok(Model::Put {
                model,
                spec: put,
                chain,
            });
        }
        let discount = self
            .discount
            .ok_or_else(|| CliError::Schema("missing [discount] section".into()))?;
        discount.validate()?;
        if let Some(spec) = &self.chain {
            if spec.rates.len() != spec.states.len() || spec.rates.iter().any(|r| r.len() != spec.states.len()) {
                return Err(CliError::Schema(format!(
                    "rates must be a {n}x{n} matrix for {n} states",
                    n = spec.states.len()
                )));
            }
            let values = spec.states.iter().map(|s| s.value).collect();
            let mut chain = Chain::from_rates(values, &spec.rates)?;
            if spec.states.iter().any(|s| s.label.is_some()) {
                let labels = spec
                    .states
                    .iter()
                    .enumerate()
                    .map(|(i, s)| s.label.clone().unwrap_or_else(|| format!("x{}", i + 1)))
                    .collect();
                chain = chain.with_labels(labels)?;
            }
            return Ok(Model::General { chain, discount });
        }
        let spec = self.two_state.expect("one form is present");
        let chain = Chain::from_rates(
            vec![spec.a, spec.b],
            &[vec![0.0, spec.lambda_a], vec![spec.lambda_b, 0.0]],
        )?
        .with_labels(vec!["a".into(), "b".into()])?;
        Ok(Model::TwoState { spec, chain, discount })
    }
}
