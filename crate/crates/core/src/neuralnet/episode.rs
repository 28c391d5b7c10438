//! Running a policy over whole hedging episodes, and the episode gradient.

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::layers::{relu_backward_inplace, relu_inplace, Dense, GruParams, GruTrace};
use super::{NetParams, NetSpec, GRU_AFTER};
use crate::accounting::{path_pnl, CostSpec, PathValues};
use crate::analytics::MarketParams;
use crate::error::{domain, Error, Result};
use crate::simulator::ScenarioSet;
use crate::strategies::{InstrumentPanel, PositionSchedule};

/// Training objective over a batch of paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Mean of |PnL|.
    MeanAbs,
    /// Largest |PnL| in the batch.
    BatchMax,
}

impl Objective {
    pub fn name(&self) -> &'static str {
        match self {
            Objective::MeanAbs => "mean",
            Objective::BatchMax => "max",
        }
    }
}

/// Loss, per-path PnL and parameter gradient of one episode batch.
#[derive(Debug, Clone)]
pub struct EpisodeOutcome {
    pub loss: f64,
    pub pnl: Vec<f64>,
    pub grad: NetParams,
}

struct Trace {
    /// Input of each dense layer.
    inputs: Vec<Array2<f64>>,
    gru: Option<(Array2<f64>, GruTrace)>,
    output: Array2<f64>,
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Network inputs for every (trading time, path), time-major.
fn episode_inputs(scenarios: &ScenarioSet, paths: &[usize]) -> Array2<f64> {
    let grid = scenarios.grid;
    let batch = paths.len();
    let mut x = Array2::zeros((grid.steps * batch, 2));
    for i in 0..grid.steps {
        let t = grid.time(i) / grid.horizon;
        for (b, &p) in paths.iter().enumerate() {
            x[[i * batch + b, 0]] = t;
            x[[i * batch + b, 1]] = scenarios.path(p)[i];
        }
    }
    x
}

fn run(params: &NetParams, spec: &NetSpec, x: Array2<f64>, batch: usize, keep: bool) -> Trace {
    let last = params.dense.len() - 1;
    let mut inputs = Vec::new();
    let mut gru = None;
    let mut a = x;
    for (l, layer) in params.dense.iter().enumerate() {
        if l == GRU_AFTER && spec.is_recurrent() {
            let g = params.gru.as_ref().expect("recurrent params carry a GRU");
            let tr = g.forward_sequence(a.view(), batch);
            let h = tr.output().clone();
            gru = Some((a, tr));
            a = h;
        }
        let mut z = layer.forward(a.view());
        if l < last {
            relu_inplace(&mut z);
        }
        if keep {
            inputs.push(a);
        }
        a = z;
    }
    if !keep {
        gru = None;
    }
    Trace { inputs, gru, output: a }
}

fn backward(params: &NetParams, spec: &NetSpec, trace: &Trace, d_out: Array2<f64>, grad: &mut NetParams) {
    let mut d = d_out;
    for l in (0..params.dense.len()).rev() {
        let input = &trace.inputs[l];
        let Some(mut d_in) = params.dense[l].backward(input.view(), &d, &mut grad.dense[l], l > 0) else {
            break;
        };
        if l == GRU_AFTER && spec.is_recurrent() {
            let g: &GruParams = params.gru.as_ref().unwrap();
            let (gx, tr) = trace.gru.as_ref().unwrap();
            d_in = g.backward_sequence(gx.view(), tr, &d_in, grad.gru.as_mut().unwrap());
            relu_backward_inplace(&mut d_in, gx);
        } else {
            relu_backward_inplace(&mut d_in, input);
        }
        d = d_in;
    }
}

/// Holdings for `q(i, α)` read from time-major network output.
#[inline]
fn q_at(out: &ArrayView2<f64>, batch: usize, b: usize, i: usize, a: usize) -> f64 {
    out[[i * batch + b, a]]
}

fn check_batch(params: &NetParams, spec: &NetSpec, scenarios: &ScenarioSet, panel: &InstrumentPanel) -> Result<()> {
    if scenarios.is_empty() {
        return Err(domain("episode batch is empty"));
    }
    if spec.output_dim != panel.instruments() {
        return Err(Error::Shape(format!(
            "network has {} outputs for {} instruments",
            spec.output_dim,
            panel.instruments()
        )));
    }
    if params.dense.len() != spec.hidden_widths.len() + 1 || params.gru.is_some() != spec.is_recurrent() {
        return Err(Error::Shape("parameters do not match the network spec".into()));
    }
    Ok(())
}

/// Per-path PnL of the batch under the policy, plus the path values used.
fn batch_pnl(
    out: ArrayView2<f64>,
    scenarios: &ScenarioSet,
    panel: &InstrumentPanel,
    mkt: &MarketParams,
    costs: &CostSpec,
) -> Result<(Vec<f64>, Vec<PathValues>)> {
    let grid = scenarios.grid;
    let batch = scenarios.len();
    let mut pnl = Vec::with_capacity(batch);
    let mut values = Vec::with_capacity(batch);
    for (b, path) in scenarios.paths().enumerate() {
        let v = PathValues::new(path, panel, mkt, &grid)?;
        let p = path_pnl(&v, grid.steps, costs, |i, a| q_at(&out, batch, b, i, a)).pnl;
        if !p.is_finite() {
            return Err(Error::NonFinite { what: "loss", index: b });
        }
        pnl.push(p);
        values.push(v);
    }
    Ok((pnl, values))
}

fn loss_and_weights(pnl: &[f64], objective: Objective) -> (f64, Vec<f64>) {
    let n = pnl.len() as f64;
    match objective {
        Objective::MeanAbs => {
            let loss = pnl.iter().map(|p| p.abs()).sum::<f64>() / n;
            (loss, pnl.iter().map(|&p| sign(p) / n).collect())
        }
        Objective::BatchMax => {
            let mut k = 0;
            for (j, p) in pnl.iter().enumerate() {
                if p.abs() > pnl[k].abs() {
                    k = j;
                }
            }
            let mut w = vec![0.0; pnl.len()];
            w[k] = sign(pnl[k]);
            (pnl[k].abs(), w)
        }
    }
}

/// `∂PnL/∂q` for every (step, instrument) of one path, scaled by `weight`.
fn pnl_sensitivity(
    out: &ArrayView2<f64>,
    batch: usize,
    b: usize,
    values: &PathValues,
    steps: usize,
    costs: &CostSpec,
    weight: f64,
    dst: &mut Array2<f64>,
    dst_batch: usize,
    dst_b: usize,
) {
    for (a, &p) in costs.fractions.iter().enumerate() {
        let alpha = a + 1;
        for i in 0..steps {
            let q = q_at(out, batch, b, i, a);
            let prev = if i == 0 { 0.0 } else { q_at(out, batch, b, i - 1, a) };
            let next = if i + 1 == steps { 0.0 } else { q_at(out, batch, b, i + 1, a) };
            let mut g = values.get(i + 1, alpha) - values.get(i, alpha);
            if p != 0.0 {
                g -= p * (values.get(i, alpha).abs() * sign(q - prev) - values.get(i + 1, alpha).abs() * sign(next - q));
            }
            dst[[i * dst_batch + dst_b, a]] = weight * g;
        }
    }
}

/// Batch loss of the policy without gradients.
pub fn episode_loss(
    params: &NetParams,
    spec: &NetSpec,
    scenarios: &ScenarioSet,
    panel: &InstrumentPanel,
    mkt: &MarketParams,
    costs: &CostSpec,
    objective: Objective,
) -> Result<(f64, Vec<f64>)> {
    check_batch(params, spec, scenarios, panel)?;
    costs.check(panel, mkt)?;
    let all: Vec<usize> = (0..scenarios.len()).collect();
    let x = episode_inputs(scenarios, &all);
    let tr = run(params, spec, x, all.len(), false);
    let (pnl, _) = batch_pnl(tr.output.view(), scenarios, panel, mkt, costs)?;
    Ok((loss_and_weights(&pnl, objective).0, pnl))
}

/// Loss of the batch and its gradient with respect to every parameter.
///
/// The policy is applied at trading times `0..n`, positions are liquidated
/// at `n`, and the PnL follows the accounting module exactly. `|x|` has
/// subgradient 0 at 0; the batch maximum differentiates through the first
/// path attaining it.
pub fn episode_gradient(
    params: &NetParams,
    spec: &NetSpec,
    scenarios: &ScenarioSet,
    panel: &InstrumentPanel,
    mkt: &MarketParams,
    costs: &CostSpec,
    objective: Objective,
) -> Result<EpisodeOutcome> {
    check_batch(params, spec, scenarios, panel)?;
    costs.check(panel, mkt)?;
    let steps = scenarios.grid.steps;
    let batch = scenarios.len();
    let all: Vec<usize> = (0..batch).collect();
    let x = episode_inputs(scenarios, &all);
    let mut grad = NetParams::zeros(spec);

    match objective {
        Objective::MeanAbs => {
            let tr = run(params, spec, x, batch, true);
            let out = tr.output.view();
            let (pnl, values) = batch_pnl(out, scenarios, panel, mkt, costs)?;
            let (loss, weights) = loss_and_weights(&pnl, objective);
            let mut d_out = Array2::zeros(tr.output.raw_dim());
            for b in 0..batch {
                if weights[b] != 0.0 {
                    pnl_sensitivity(&out, batch, b, &values[b], steps, costs, weights[b], &mut d_out, batch, b);
                }
            }
            backward(params, spec, &tr, d_out, &mut grad);
            Ok(EpisodeOutcome { loss, pnl, grad })
        }
        Objective::BatchMax => {
            // Only the arg-max path carries gradient; rerun it alone with a trace.
            let tr = run(params, spec, x, batch, false);
            let (pnl, values) = batch_pnl(tr.output.view(), scenarios, panel, mkt, costs)?;
            let (loss, weights) = loss_and_weights(&pnl, objective);
            let k = weights.iter().position(|&w| w != 0.0);
            if let Some(k) = k {
                let xk = episode_inputs(scenarios, &[k]);
                let trk = run(params, spec, xk, 1, true);
                let outk = trk.output.view();
                let mut d_out = Array2::zeros(trk.output.raw_dim());
                pnl_sensitivity(&outk, 1, 0, &values[k], steps, costs, weights[k], &mut d_out, 1, 0);
                backward(params, spec, &trk, d_out, &mut grad);
            }
            Ok(EpisodeOutcome { loss, pnl, grad })
        }
    }
}

/// Positions chosen by the policy on every path, with the horizon row zero.
pub fn policy_schedule(params: &NetParams, spec: &NetSpec, scenarios: &ScenarioSet) -> Result<PositionSchedule> {
    const CHUNK: usize = 1024;
    let steps = scenarios.grid.steps;
    let m = spec.output_dim;
    let mut sched = PositionSchedule::zeros(scenarios.len(), steps, m);
    let all: Vec<usize> = (0..scenarios.len()).collect();
    for chunk in all.chunks(CHUNK) {
        let x = episode_inputs(scenarios, chunk);
        let out = run(params, spec, x, chunk.len(), false).output;
        for (b, &p) in chunk.iter().enumerate() {
            for i in 0..steps {
                let row = out.slice(s![i * chunk.len() + b, ..]);
                let dst = sched.at_mut(p, i);
                for a in 0..m {
                    dst[a] = row[a];
                }
                if dst.iter().any(|q| !q.is_finite()) {
                    return Err(Error::NonFinite { what: "position", index: p });
                }
            }
        }
    }
    Ok(sched)
}

/// Evaluate the policy at one point.
///
/// `input` is `(t/T′, S_t)`. The recurrent variant takes and returns its
/// state (zeros when `state` is `None`); the feedforward variant returns no state.
pub fn forward(params: &NetParams, spec: &NetSpec, input: [f64; 2], state: Option<&[f64]>) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    if input.iter().any(|v| !v.is_finite()) {
        return Err(domain("network input must be finite"));
    }
    let x = Array2::from_shape_vec((1, 2), input.to_vec()).expect("1×2");
    let last = params.dense.len() - 1;
    let mut a = x;
    let mut new_state = None;
    for (l, layer) in params.dense.iter().enumerate() {
        if l == GRU_AFTER && spec.is_recurrent() {
            let g = params.gru.as_ref().expect("recurrent params carry a GRU");
            let zeros = vec![0.0; g.cells()];
            let prev = state.unwrap_or(&zeros);
            if prev.len() != g.cells() {
                return Err(Error::Shape(format!("state has {} entries, GRU has {}", prev.len(), g.cells())));
            }
            let h = g.step(a.view(), prev);
            a = Array2::from_shape_vec((1, h.len()), h.clone()).expect("1×H");
            new_state = Some(h);
        }
        let mut z = Dense::forward(layer, a.view());
        if l < last {
            relu_inplace(&mut z);
        }
        a = z;
    }
    Ok((a.row(0).to_vec(), new_state))
}

/// Hash of every kink indicator the loss passes through (ReLU signs,
/// |Δq| and |PnL| signs). Finite differences are only valid between
/// points that share a signature.
pub fn activation_signature(
    params: &NetParams,
    spec: &NetSpec,
    scenarios: &ScenarioSet,
    panel: &InstrumentPanel,
    mkt: &MarketParams,
    costs: &CostSpec,
) -> Result<u64> {
    use std::hash::{Hash, Hasher};
    let all: Vec<usize> = (0..scenarios.len()).collect();
    let x = episode_inputs(scenarios, &all);
    let tr = run(params, spec, x, all.len(), true);
    let mut h = std::collections::hash_map::DefaultHasher::new();
    for a in &tr.inputs[1..] {
        for v in a.iter() {
            (*v > 0.0).hash(&mut h);
        }
    }
    if let Some((gx, _)) = &tr.gru {
        for v in gx.iter() {
            (*v > 0.0).hash(&mut h);
        }
    }
    let out = tr.output.view();
    let batch = all.len();
    for b in 0..batch {
        for a in 0..spec.output_dim {
            let mut prev = 0.0;
            for i in 0..scenarios.grid.steps {
                let q = q_at(&out, batch, b, i, a);
                sign(q - prev).to_bits().hash(&mut h);
                prev = q;
            }
            sign(prev).to_bits().hash(&mut h);
        }
    }
    let (pnl, _) = batch_pnl(out, scenarios, panel, mkt, costs)?;
    for p in &pnl {
        sign(*p).to_bits().hash(&mut h);
    }
    let (_, w) = loss_and_weights(&pnl, Objective::BatchMax);
    w.iter().position(|&v| v != 0.0).hash(&mut h);
    Ok(h.finish())
}
