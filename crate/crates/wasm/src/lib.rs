//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export returns a flat `Float64Array` with a fixed row layout, so the
//! page needs no serialization layer.

use wasm_bindgen::prelude::*;

use hedgelab::experiment::{evaluate_streamed, run_path_trace, run_surface, CostRegime, ExperimentConfig, Hedger, Model, Strategy};
use hedgelab::neuralnet::Objective;
use hedgelab::simulator::sample_scenario_range;
use hedgelab::Error;

fn strategy(name: &str) -> hedgelab::Result<Strategy> {
    match name {
        "delta" => Ok(Strategy::Delta),
        "gamma" => Ok(Strategy::Gamma),
        other => Err(Error::Config(format!("unknown classical strategy {other:?}"))),
    }
}

fn regime(name: &str) -> hedgelab::Result<CostRegime> {
    match name {
        "none" => Ok(CostRegime::None),
        "normal" => Ok(CostRegime::Normal),
        "high" => Ok(CostRegime::High),
        other => Err(Error::Config(format!("unknown cost regime {other:?}"))),
    }
}

fn model(name: &str) -> hedgelab::Result<Model> {
    match name {
        "fixed" => Ok(Model::Fixed),
        "uncertain" => Ok(Model::Uncertain),
        other => Err(Error::Config(format!("unknown model {other:?}"))),
    }
}

/// Rows `[S, portfolio Δ, portfolio Γ, Δ⁰, Γ⁰]` at time `t` for `count` spots in `[lo, hi]`.
pub fn surface_rows(strategy_name: &str, t: f64, lo: f64, hi: f64, count: usize) -> hedgelab::Result<Vec<f64>> {
    let cfg = ExperimentConfig::default();
    let mut section = cfg.surface.clone();
    section.spot_lo = lo;
    section.spot_hi = hi;
    section.spot_count = count;
    let rows = run_surface(&Hedger::classical(strategy(strategy_name)?)?, &cfg, &[t], &section.spots())?;
    Ok(rows
        .iter()
        .flat_map(|r| [r.spot, r.portfolio_delta, r.portfolio_gamma, r.target_delta, r.target_gamma])
        .collect())
}

/// `[loss_mean, loss_max, pnl_0, …, pnl_{paths−1}]` of a classical hedge.
pub fn experiment_pnl(
    strategy_name: &str,
    model_name: &str,
    regime_name: &str,
    steps: usize,
    paths: usize,
    seed: u64,
) -> hedgelab::Result<Vec<f64>> {
    let cfg = ExperimentConfig {
        model: Some(model(model_name)?),
        steps,
        paths,
        seed,
        ..Default::default()
    };
    cfg.validate()?;
    let s = strategy(strategy_name)?;
    let m = s.instruments();
    let report = evaluate_streamed(
        &Hedger::classical(s)?,
        &cfg.distribution(Objective::MeanAbs)?,
        cfg.grid()?,
        paths,
        seed,
        &cfg.panel(m)?,
        &cfg.market()?,
        &cfg.costs(regime(regime_name)?, m)?,
    )?;
    let mut out = vec![report.loss_mean, report.loss_max];
    out.extend(report.pnl());
    Ok(out)
}

/// Rows `[t, S, q¹, q², cost, γq¹, γq², γcost]`: the strategy and the gamma benchmark along one path.
pub fn trace_rows(strategy_name: &str, regime_name: &str, steps: usize, seed: u64, path_id: u64) -> hedgelab::Result<Vec<f64>> {
    let cfg = ExperimentConfig {
        strategy: strategy(strategy_name)?,
        cost_regime: regime(regime_name)?,
        steps,
        seed,
        ..Default::default()
    };
    cfg.validate()?;
    let scen = sample_scenario_range(&cfg.distribution(Objective::MeanAbs)?, cfg.grid()?, path_id, 1, seed)?;
    let rows = run_path_trace(&Hedger::classical(cfg.strategy)?, &cfg, &scen)?;
    Ok(rows
        .iter()
        .flat_map(|r| {
            [
                r.t,
                r.spot,
                r.strategy.q[0],
                r.strategy.q[1],
                r.strategy.cumulative_cost,
                r.benchmark.q[0],
                r.benchmark.q[1],
                r.benchmark.cumulative_cost,
            ]
        })
        .collect())
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub fn greek_surface(strategy: &str, t: f64, spot_lo: f64, spot_hi: f64, count: usize) -> Result<Vec<f64>, JsError> {
    surface_rows(strategy, t, spot_lo, spot_hi, count).map_err(js)
}

#[wasm_bindgen]
pub fn hedge_experiment(strategy: &str, model: &str, regime: &str, steps: usize, paths: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    experiment_pnl(strategy, model, regime, steps, paths, seed).map_err(js)
}

#[wasm_bindgen]
pub fn path_trace(strategy: &str, regime: &str, steps: usize, seed: u64, path_id: u64) -> Result<Vec<f64>, JsError> {
    trace_rows(strategy, regime, steps, seed, path_id).map_err(js)
}
