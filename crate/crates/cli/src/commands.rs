use std::collections::BTreeMap;

use equistop::equilibrium::{
    classify, classify_two_state, default_tolerance, enumerate_mild, iterate_optimal, verify_optimal, StrongKind,
    DEFAULT_EPS_GRID,
};
use equistop::putmodel::{analyze_put, PutOptions};
use equistop::{is_irreducible, mc_hitting_value, Chain, StoppingRegion, Valuator};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{self, GridSpec, Model, ModelConfig};
use crate::{Cli, CliError, Command};

const SCHEMA: u32 = 1;

pub fn run(cli: &Cli) -> Result<String, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Schema("--config is required".into()))?;
    let cfg = config::load(path)?;
    let model = cfg.build()?;
    let tol = match cli.tol.or(cfg.tolerances.tol) {
        Some(t) if t > 0.0 => t,
        Some(t) => return Err(CliError::Schema(format!("tolerance must be positive, got {t}"))),
        None => default_tolerance(model.chain()),
    };
    let out = match cli.command {
        Command::Validate => validate(&model),
        Command::Classify => cmd_classify(cli, &cfg, &model, tol)?,
        Command::Iterate => cmd_iterate(cli, &model, tol)?,
        Command::Enumerate => cmd_enumerate(cli, &model, tol)?,
        Command::TwoStateMap => cmd_two_state_map(cli, &cfg, &model, tol)?,
        Command::Put => cmd_put(cli, &cfg, &model, tol)?,
    };
    serde_json::to_string_pretty(&out).map_err(|e| CliError::Io(e.to_string()))
}

fn labels(chain: &Chain, region: &StoppingRegion) -> Vec<String> {
    region.iter().map(|i| chain.labels()[i].clone()).collect()
}

fn parse_region(chain: &Chain, spec: Option<&str>) -> Result<StoppingRegion, CliError> {
    let spec = spec.ok_or_else(|| CliError::Schema("--region is required for this command".into()))?;
    let mut region = StoppingRegion::empty(chain.len());
    for label in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let i = chain
            .label_index(label)
            .ok_or_else(|| CliError::Schema(format!("unknown state label {label:?}")))?;
        region.insert(i);
    }
    Ok(region)
}

fn write_csv<R: Serialize>(cli: &Cli, suffix: &str, rows: &[R]) -> Result<Option<String>, CliError> {
    let Some(prefix) = &cli.out else {
        return Ok(None);
    };
    let path = format!("{prefix}{suffix}");
    let io = |e: csv::Error| CliError::Io(format!("{path}: {e}"));
    let mut w = csv::Writer::from_path(&path).map_err(io)?;
    for row in rows {
        w.serialize(row).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Io(format!("{path}: {e}")))?;
    Ok(Some(path))
}

fn validate(model: &Model) -> Value {
    let chain = model.chain();
    let d = model.discount();
    let (d1, d2) = d.derivatives_at_zero();
    let kind = match model {
        Model::General { .. } => "chain",
        Model::TwoState { .. } => "two_state",
        Model::Put { .. } => "put",
    };
    json!({
        "schema": SCHEMA,
        "command": "validate",
        "valid": true,
        "form": kind,
        "n_states": chain.len(),
        "labels": chain.labels(),
        "values": chain.values(),
        "holding_rates": chain.holding_rates(),
        "irreducible": is_irreducible(chain),
        "skip_free": chain.is_skip_free(),
        "discount": d,
        "discount_derivatives": [d1, d2],
        "log_subadditive": d.check_log_subadditive(100.0, 200),
    })
}

fn cmd_classify(cli: &Cli, cfg: &ModelConfig, model: &Model, tol: f64) -> Result<Value, CliError> {
    let chain = model.chain();
    let d = model.discount();
    let region = parse_region(chain, cli.region.as_deref())?;
    let grid = cfg
        .tolerances
        .eps_grid
        .clone()
        .unwrap_or_else(|| DEFAULT_EPS_GRID.to_vec());
    let c = classify(chain, &d, &region, tol, &grid)?;
    let gaps: BTreeMap<&str, f64> = c
        .weak
        .gaps
        .iter()
        .map(|&(x, g)| (chain.labels()[x].as_str(), g))
        .collect();
    let strong = match &c.strong {
        None => "not_weak",
        Some(s) => match s.verdict {
            StrongKind::Strong => "strong",
            StrongKind::WeakOnly => "weak_only",
            StrongKind::Indeterminate => "indeterminate",
        },
    };
    let mut out = json!({
        "schema": SCHEMA,
        "command": "classify",
        "region": labels(chain, &region),
        "mild": c.is_mild(),
        "weak": c.is_weak(),
        "strong": c.is_strong(),
        "strong_verdict": strong,
        "method": c.strong.as_ref().map(|s| s.method),
        "gaps": gaps,
        "classification": c,
    });
    if let Some(mc) = cfg.monte_carlo {
        let seed = cli.seed.or(cfg.seed).unwrap_or(0);
        let j = Valuator::new(chain, &d).hitting_value(&region, 0.0, 0.01 * tol)?;
        let mut checks = Vec::new();
        for x in (0..chain.len()).filter(|&x| !region.contains(x)) {
            let e = mc_hitting_value(chain, &d, &region, x, mc.paths, mc.horizon, seed)?;
            checks.push(json!({
                "state": chain.labels()[x],
                "quadrature": j.values[x],
                "estimate": e.estimate,
                "stderr": e.stderr,
                "bias_bound": e.bias_bound,
            }));
        }
        out["monte_carlo"] = json!({ "seed": seed, "paths": mc.paths, "checks": checks });
    }
    Ok(out)
}

#[derive(Serialize)]
struct IterRow<'a> {
    step: usize,
    state: &'a str,
    value: f64,
    sup: Option<f64>,
    in_region: bool,
}

fn cmd_iterate(cli: &Cli, model: &Model, tol: f64) -> Result<Value, CliError> {
    let chain = model.chain();
    let trace = iterate_optimal(chain, &model.discount(), tol)?;
    let steps: Vec<Value> = trace
        .steps
        .iter()
        .enumerate()
        .map(|(n, s)| {
            json!({
                "n": n,
                "region": labels(chain, &s.region),
                "added": s.added.iter().map(|a| json!({
                    "state": chain.labels()[a.state],
                    "value": a.value,
                    "sup": a.sup,
                    "argmax": a.argmax.as_ref().map(|r| labels(chain, r)),
                })).collect::<Vec<_>>(),
            })
        })
        .collect();
    let rows: Vec<IterRow> = trace
        .steps
        .iter()
        .enumerate()
        .flat_map(|(n, s)| {
            (0..chain.len()).map(move |x| IterRow {
                step: n,
                state: chain.labels()[x].as_str(),
                value: chain.value(x),
                sup: s.sups[x],
                in_region: s.region.contains(x),
            })
        })
        .collect();
    let csv = write_csv(cli, "_iterate.csv", &rows)?;
    Ok(json!({
        "schema": SCHEMA,
        "command": "iterate",
        "tol": tol,
        "steps": steps,
        "final": labels(chain, &trace.final_region),
        "augmenting_steps": trace.augmenting_steps(),
        "skip_free": trace.skip_free,
        "csv": csv,
    }))
}

fn cmd_enumerate(cli: &Cli, model: &Model, tol: f64) -> Result<Value, CliError> {
    let chain = model.chain();
    let d = model.discount();
    let mild = enumerate_mild(chain, &d, tol)?;
    let smallest = mild.iter().fold(StoppingRegion::full(chain.len()), |acc, r| {
        let mut s = StoppingRegion::empty(chain.len());
        for i in r.iter().filter(|&i| acc.contains(i)) {
            s.insert(i);
        }
        s
    });
    let intersection_is_mild = mild.contains(&smallest);
    let mut out = json!({
        "schema": SCHEMA,
        "command": "enumerate",
        "count": mild.len(),
        "mild_regions": mild.iter().map(|r| labels(chain, r)).collect::<Vec<_>>(),
        "intersection": labels(chain, &smallest),
        "intersection_is_mild": intersection_is_mild,
    });
    if cli.region.is_some() {
        let region = parse_region(chain, cli.region.as_deref())?;
        let report = verify_optimal(chain, &d, &region, tol)?;
        out["verify"] = json!({
            "region": labels(chain, &region),
            "optimal": report.optimal,
            "smallest": report.smallest,
            "dominance_failures": report.dominance_failures.iter().map(|f| json!({
                "region": labels(chain, &f.region),
                "state": chain.labels()[f.state],
                "excess": f.excess,
            })).collect::<Vec<_>>(),
        });
    }
    Ok(out)
}

#[derive(Serialize)]
struct MapRow {
    ratio: f64,
    lambda_b: f64,
    case: &'static str,
    a_mild: bool,
    ab_weak: bool,
    ab_strong: bool,
    numeric_a_mild: bool,
    numeric_ab_weak: bool,
    numeric_ab_strong: bool,
    second_order: Option<f64>,
    agree: bool,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

fn cmd_two_state_map(cli: &Cli, cfg: &ModelConfig, model: &Model, tol: f64) -> Result<Value, CliError> {
    let Model::TwoState { spec, discount, .. } = model else {
        return Err(CliError::Schema("two-state-map needs a [two_state] model".into()));
    };
    if !(spec.a > spec.b) {
        return Err(equistop::Error::ParameterOrderViolation { a: spec.a, b: spec.b }.into());
    }
    let grid = cfg.grid.unwrap_or(GridSpec {
        ratio_min: 0.02,
        ratio_max: 0.98,
        ratio_points: 50,
        lambda_b_min: 0.1,
        lambda_b_max: 5.0,
        lambda_b_points: 50,
    });
    let mut rows = Vec::new();
    for lambda_b in linspace(grid.lambda_b_min, grid.lambda_b_max, grid.lambda_b_points) {
        let mut ratios = linspace(grid.ratio_min, grid.ratio_max, grid.ratio_points);
        // the first-order critical column
        let critical = lambda_b / (lambda_b - discount.slope_at_zero());
        ratios.push(critical);
        ratios.sort_by(f64::total_cmp);
        for ratio in ratios {
            let r = classify_two_state(spec.a, ratio * spec.a, spec.lambda_a, lambda_b, discount, tol)?;
            rows.push(MapRow {
                ratio,
                lambda_b,
                case: r.case.label(),
                a_mild: r.closed_form[0].mild,
                ab_weak: r.closed_form[1].weak,
                ab_strong: r.closed_form[1].strong,
                numeric_a_mild: r.numeric[0].mild,
                numeric_ab_weak: r.numeric[1].weak,
                numeric_ab_strong: r.numeric[1].strong,
                second_order: r.second_order,
                agree: r.agree,
            });
        }
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &rows {
        *counts.entry(r.case).or_default() += 1;
    }
    let weak_not_strong: Vec<[f64; 2]> = rows
        .iter()
        .filter(|r| r.ab_weak && !r.ab_strong)
        .map(|r| [r.ratio, r.lambda_b])
        .collect();
    let csv = write_csv(cli, "_two_state_map.csv", &rows)?;
    Ok(json!({
        "schema": SCHEMA,
        "command": "two-state-map",
        "a": spec.a,
        "lambda_a": spec.lambda_a,
        "discount": discount,
        "cells": rows.len(),
        "case_counts": counts,
        "disagreements": rows.iter().filter(|r| !r.agree).count(),
        "weak_not_strong": weak_not_strong,
        "csv": csv,
    }))
}

fn cmd_put(cli: &Cli, cfg: &ModelConfig, model: &Model, tol: f64) -> Result<Value, CliError> {
    let Model::Put { model: m, spec, .. } = model else {
        return Err(CliError::Schema("put needs a [put] model".into()));
    };
    let opts = PutOptions {
        tol: Some(tol),
        series_tol: cfg.tolerances.series_tol.unwrap_or(1e-12),
        horizon: spec.horizon,
        dt: spec.dt,
    };
    let a = analyze_put(m, &opts)?;
    let levels = |idx: &[usize]| idx.iter().map(|&j| m.level(j)).collect::<Vec<i64>>();
    let csv = write_csv(cli, "_put.csv", &a.rows)?;
    Ok(json!({
        "schema": SCHEMA,
        "command": "put",
        "model": m,
        "alpha1": a.alpha1.value,
        "alpha1_terms": a.alpha1.terms,
        "alpha1_tail_bound": a.alpha1.tail_bound,
        "exponent": a.threshold.exponent,
        "n0": a.threshold.n0,
        "m0": a.threshold.m0,
        "sandwich_holds": a.threshold.sandwich_holds,
        "S_inf": levels(&a.comparison.equilibrium_region),
        "A0": levels(&a.comparison.precommitment_region),
        "containment_holds": a.comparison.containment_holds,
        "threshold_matches": a.threshold_matches,
        "augmenting_steps": a.trace.augmenting_steps(),
        "within_step_bound": a.within_step_bound,
        "richardson_change": a.precommitment.richardson_change,
        "dt": a.precommitment.dt,
        "horizon": a.precommitment.horizon,
        "csv": csv,
    }))
}
