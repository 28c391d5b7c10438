//! Profit and loss of a hedged short call, and the two loss functionals.
//!
//! For one path with holdings `q^α_i` (zero at `i = n`):
//!
//! ```text
//! PnL = V⁰_0 − V⁰_n + Σ_α Σ_{i<n} q^α_i (V^α_{i+1} − V^α_i)
//!       − Σ_α p^α Σ_{i=0}^{n} |V^α_i| |q^α_i − q^α_{i−1}|,   q^α_{−1} = 0
//! ```
//!
//! The written option itself is traded without cost.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::analytics::{quote, MarketParams};
use crate::error::{config, domain, Error, Result};
use crate::simulator::ScenarioSet;
use crate::strategies::{InstrumentPanel, PositionSchedule};

/// Proportional cost fraction per hedging instrument.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    #[serde(rename = "cost_fraction")]
    pub fractions: Vec<f64>,
}

impl CostSpec {
    pub fn new(fractions: Vec<f64>) -> Result<Self> {
        if fractions.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(config("cost fractions must be finite and non-negative"));
        }
        Ok(Self { fractions })
    }

    pub fn zero(instruments: usize) -> Self {
        Self {
            fractions: vec![0.0; instruments],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.fractions.iter().all(|&p| p == 0.0)
    }

    pub(crate) fn check(&self, panel: &InstrumentPanel, mkt: &MarketParams) -> Result<()> {
        if self.fractions.len() != panel.instruments() {
            return Err(config(format!(
                "{} cost fractions for {} hedging instruments",
                self.fractions.len(),
                panel.instruments()
            )));
        }
        if self.fractions.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(config("cost fractions must be finite and non-negative"));
        }
        if mkt.rate != 0.0 && !self.is_zero() {
            return Err(config(
                "cash accrual is not modelled: transaction costs require a zero rate",
            ));
        }
        Ok(())
    }
}

/// Instrument values along a path, laid out `[i][α]` with `α = 0..=M`.
#[derive(Debug, Clone)]
pub struct PathValues {
    width: usize,
    values: Vec<f64>,
}

impl PathValues {
    pub fn new(path: &[f64], panel: &InstrumentPanel, mkt: &MarketParams, grid: &crate::simulator::TimeGrid) -> Result<Self> {
        let width = panel.instruments() + 1;
        let mut values = Vec::with_capacity(path.len() * width);
        for (i, &s) in path.iter().enumerate() {
            let t = grid.time(i);
            values.push(quote(s, &panel.hedged, mkt, t)?.price);
            for h in &panel.hedgers {
                values.push(quote(s, h, mkt, t)?.price);
            }
        }
        Ok(Self { width, values })
    }

    /// Value of instrument `alpha` (0 = hedged option) at timepoint `i`.
    #[inline]
    pub fn get(&self, i: usize, alpha: usize) -> f64 {
        self.values[i * self.width + alpha]
    }
}

/// Decomposed PnL of one path.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PathPnl {
    /// `V⁰_0 − V⁰_n`: premium received minus liquidation value of the written option.
    pub premium: f64,
    pub trading_gain: f64,
    pub cost_total: f64,
    pub pnl: f64,
}

/// PnL of one path given its holdings `q(i, α)` for `i = 0..n` (the row at `n` is taken as zero).
pub fn path_pnl(values: &PathValues, steps: usize, costs: &CostSpec, q: impl Fn(usize, usize) -> f64) -> PathPnl {
    let premium = values.get(0, 0) - values.get(steps, 0);
    let mut gain = 0.0;
    let mut cost = 0.0;
    for (a, &p) in costs.fractions.iter().enumerate() {
        let alpha = a + 1;
        let mut prev = 0.0;
        for i in 0..steps {
            let qi = q(i, a);
            gain += qi * (values.get(i + 1, alpha) - values.get(i, alpha));
            cost += p * values.get(i, alpha).abs() * (qi - prev).abs();
            prev = qi;
        }
        cost += p * values.get(steps, alpha).abs() * prev.abs();
    }
    PathPnl {
        premium,
        trading_gain: gain,
        cost_total: cost,
        pnl: premium + gain - cost,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PnlReport {
    pub path_ids: Vec<u64>,
    pub paths: Vec<PathPnl>,
    pub loss_mean: f64,
    pub loss_max: f64,
}

impl PnlReport {
    pub fn from_paths(path_ids: Vec<u64>, paths: Vec<PathPnl>) -> Result<Self> {
        let pnl: Vec<f64> = paths.iter().map(|p| p.pnl).collect();
        Ok(Self {
            loss_mean: mean_abs(&pnl)?,
            loss_max: max_abs(&pnl)?,
            path_ids,
            paths,
        })
    }

    pub fn pnl(&self) -> Vec<f64> {
        self.paths.iter().map(|p| p.pnl).collect()
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// Append another report's paths and refresh the aggregates.
    pub fn extend(&mut self, other: PnlReport) -> Result<()> {
        self.path_ids.extend(other.path_ids);
        self.paths.extend(other.paths);
        let pnl = self.pnl();
        self.loss_mean = mean_abs(&pnl)?;
        self.loss_max = max_abs(&pnl)?;
        Ok(())
    }

    /// CSV rows `path_id, trading_gain, cost_total, pnl`.
    pub fn write_csv<W: Write>(&self, mut out: W, tag: &str) -> Result<()> {
        writeln!(out, "# {tag}")?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["path_id", "trading_gain", "cost_total", "pnl"])?;
        for (id, p) in self.path_ids.iter().zip(&self.paths) {
            w.write_record([
                id.to_string(),
                p.trading_gain.to_string(),
                p.cost_total.to_string(),
                p.pnl.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary(&self, config_hash: &str) -> PnlSummary {
        PnlSummary {
            loss_mean: self.loss_mean,
            loss_max: self.loss_max,
            paths: self.len(),
            config_hash: config_hash.to_string(),
        }
    }
}

/// JSON summary of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PnlSummary {
    pub loss_mean: f64,
    pub loss_max: f64,
    pub paths: usize,
    pub config_hash: String,
}

fn mean_abs(pnl: &[f64]) -> Result<f64> {
    if pnl.is_empty() {
        return Err(domain("loss of an empty report"));
    }
    Ok(pnl.iter().map(|x| x.abs()).sum::<f64>() / pnl.len() as f64)
}

fn max_abs(pnl: &[f64]) -> Result<f64> {
    if pnl.is_empty() {
        return Err(domain("loss of an empty report"));
    }
    Ok(pnl.iter().fold(0.0, |m, x| m.max(x.abs())))
}

/// Mean absolute PnL over the report's paths.
pub fn loss_mean(report: &PnlReport) -> Result<f64> {
    mean_abs(&report.pnl())
}

/// Largest absolute PnL over the report's paths.
pub fn loss_max(report: &PnlReport) -> Result<f64> {
    max_abs(&report.pnl())
}

pub fn compute_pnl(
    schedule: &PositionSchedule,
    scenarios: &ScenarioSet,
    panel: &InstrumentPanel,
    mkt: &MarketParams,
    costs: &CostSpec,
) -> Result<PnlReport> {
    schedule.check_shape(scenarios, panel)?;
    costs.check(panel, mkt)?;
    let grid = scenarios.grid;
    let n = grid.steps;
    let mut out = Vec::with_capacity(scenarios.len());
    for (p, path) in scenarios.paths().enumerate() {
        if schedule.at(p, n).iter().any(|&q| q != 0.0) {
            return Err(Error::Contract(format!(
                "path {p} holds a non-zero position at the horizon"
            )));
        }
        let values = PathValues::new(path, panel, mkt, &grid)?;
        let pnl = path_pnl(&values, n, costs, |i, a| schedule.at(p, i)[a]);
        if !pnl.pnl.is_finite() {
            return Err(Error::NonFinite { what: "pnl", index: p });
        }
        out.push(pnl);
    }
    PnlReport::from_paths((0..scenarios.len()).map(|k| scenarios.path_id(k)).collect(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::MarketParams;
    use crate::simulator::{fixed_model, sample_scenarios, uncertain_model, Law, PathParams, TimeGrid};
    use crate::strategies::{delta_hedge, gamma_hedge};
    use proptest::prelude::*;

    fn mkt() -> MarketParams {
        MarketParams::new(0.0, 0.2).unwrap()
    }

    fn one_path(prices: &[f64]) -> ScenarioSet {
        let grid = TimeGrid::new(1.0, prices.len() - 1).unwrap();
        let params = vec![PathParams { drift: 0.0, vol: 0.2, spot: prices[0] }];
        ScenarioSet::from_paths(grid, 0, params, vec![prices.to_vec()]).unwrap()
    }

    #[test]
    fn no_trading_leaves_premium() {
        let set = sample_scenarios(&uncertain_model(), TimeGrid::new(1.0, 6).unwrap(), 20, 2).unwrap();
        let panel = InstrumentPanel::new(1.0, &[0.0, 1.1], 1.4).unwrap();
        let zero = PositionSchedule::zeros(20, 6, 2);
        let rep = compute_pnl(&zero, &set, &panel, &mkt(), &CostSpec::zero(2)).unwrap();
        for (k, p) in rep.paths.iter().enumerate() {
            let path = set.path(k);
            let v0 = quote(path[0], &panel.hedged, &mkt(), 0.0).unwrap().price;
            let v1 = quote(path[6], &panel.hedged, &mkt(), 1.0).unwrap().price;
            assert_eq!(p.pnl, v0 - v1);
            assert_eq!(p.cost_total, 0.0);
        }
    }

    #[test]
    fn hand_evaluated_two_step_example() {
        // Underlying only, path (1, 1.1, 0.9), q = (0.5, 0.3, 0), p = 1%.
        // gain = 0.5·0.1 + 0.3·(−0.2) = −0.01
        // cost = 0.01·(1·0.5 + 1.1·0.2 + 0.9·0.3) = 0.0099
        let set = one_path(&[1.0, 1.1, 0.9]);
        let panel = InstrumentPanel::new(1.0, &[0.0], 1.4).unwrap();
        let sched = PositionSchedule::from_flat(1, 2, 1, vec![0.5, 0.3, 0.0]).unwrap();
        let rep = compute_pnl(&sched, &set, &panel, &mkt(), &CostSpec::new(vec![0.01]).unwrap()).unwrap();
        let p = rep.paths[0];
        assert!((p.trading_gain - -0.01).abs() < 1e-15);
        assert!((p.cost_total - 0.0099).abs() < 1e-15);
        assert!((p.pnl - (p.premium + p.trading_gain - p.cost_total)).abs() < 1e-12);
    }

    #[test]
    fn loss_functionals() {
        let mk = |v: &[f64]| {
            PnlReport::from_paths(
                (0..v.len() as u64).collect(),
                v.iter().map(|&x| PathPnl { pnl: x, ..Default::default() }).collect(),
            )
            .unwrap()
        };
        assert!((loss_mean(&mk(&[0.1, -0.1])).unwrap() - 0.1).abs() < 1e-16);
        assert_eq!(loss_mean(&mk(&[0.0, 0.0, 0.0])).unwrap(), 0.0);
        assert_eq!(loss_max(&mk(&[0.1, -0.3])).unwrap(), 0.3);
        assert_eq!(loss_max(&mk(&[-0.7])).unwrap(), 0.7);
        let empty = PnlReport { path_ids: vec![], paths: vec![], loss_mean: 0.0, loss_max: 0.0 };
        assert!(loss_mean(&empty).is_err());
        assert!(loss_max(&empty).is_err());
        assert!(PnlReport::from_paths(vec![], vec![]).is_err());
    }

    #[test]
    fn rejects_open_terminal_position_and_bad_shapes() {
        let set = one_path(&[1.0, 1.1, 0.9]);
        let panel = InstrumentPanel::new(1.0, &[0.0], 1.4).unwrap();
        let open = PositionSchedule::from_flat(1, 2, 1, vec![0.5, 0.3, 0.1]).unwrap();
        assert!(matches!(
            compute_pnl(&open, &set, &panel, &mkt(), &CostSpec::zero(1)),
            Err(Error::Contract(_))
        ));
        let wrong = PositionSchedule::zeros(1, 3, 1);
        assert!(matches!(
            compute_pnl(&wrong, &set, &panel, &mkt(), &CostSpec::zero(1)),
            Err(Error::Shape(_))
        ));
        let rate = MarketParams::new(0.01, 0.2).unwrap();
        let zero = PositionSchedule::zeros(1, 2, 1);
        assert!(compute_pnl(&zero, &set, &panel, &rate, &CostSpec::new(vec![0.01]).unwrap()).is_err());
        assert!(compute_pnl(&zero, &set, &panel, &rate, &CostSpec::zero(1)).is_ok());
    }

    #[test]
    fn gamma_hedge_is_nearly_exact_without_model_error() {
        let dist = fixed_model(0.2, 0.0, Law::fixed(1.0)).unwrap();
        let set = sample_scenarios(&dist, TimeGrid::new(1.0, 1000).unwrap(), 200, 8).unwrap();
        let panel = InstrumentPanel::new(1.0, &[0.0, 1.1], 1.4).unwrap();
        let gamma = gamma_hedge(&set, &panel, &mkt()).unwrap();
        let delta = delta_hedge(&set, &panel, &mkt()).unwrap();
        let g = compute_pnl(&gamma, &set, &panel, &mkt(), &CostSpec::zero(2)).unwrap();
        let d = compute_pnl(&delta, &set, &panel, &mkt(), &CostSpec::zero(2)).unwrap();
        assert!(g.loss_mean < 1e-4, "gamma loss {}", g.loss_mean);
        assert!(g.loss_mean * 10.0 < d.loss_mean);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn costs_reduce_pnl_and_scaling_is_linear(
            seed in 0u64..1000,
            p1 in 0.0f64..0.02,
            p2 in 0.0f64..0.02,
            bump in 0.0f64..0.02,
            raw in proptest::collection::vec(-2.0f64..2.0, 8),
        ) {
            let grid = TimeGrid::new(1.0, 3).unwrap();
            let set = sample_scenarios(&uncertain_model(), grid, 2, seed).unwrap();
            let panel = InstrumentPanel::new(1.0, &[0.0, 1.1], 1.4).unwrap();
            let mut q = Vec::new();
            for p in 0..2 {
                for i in 0..4 {
                    for a in 0..2 {
                        q.push(if i == 3 { 0.0 } else { raw[(p * 3 + i + a) % 8] });
                    }
                }
            }
            let sched = PositionSchedule::from_flat(2, 3, 2, q).unwrap();
            let low = compute_pnl(&sched, &set, &panel, &mkt(), &CostSpec::new(vec![p1, p2]).unwrap()).unwrap();
            let high = compute_pnl(&sched, &set, &panel, &mkt(), &CostSpec::new(vec![p1 + bump, p2]).unwrap()).unwrap();
            for (a, b) in low.paths.iter().zip(&high.paths) {
                prop_assert!(b.pnl <= a.pnl + 1e-15);
            }
            let doubled = compute_pnl(&sched.scaled(2.0), &set, &panel, &mkt(), &CostSpec::new(vec![p1, p2]).unwrap()).unwrap();
            for (a, b) in low.paths.iter().zip(&doubled.paths) {
                prop_assert_eq!(b.trading_gain, 2.0 * a.trading_gain);
                prop_assert_eq!(b.cost_total, 2.0 * a.cost_total);
                prop_assert!((a.pnl - (a.premium + a.trading_gain - a.cost_total)).abs() <= 1e-12);
            }
            prop_assert!(low.loss_max >= low.loss_mean);
        }
    }
}
