//! Classical benchmark strategies and portfolio greeks.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::analytics::{gamma_ratio, quote, MarketParams, OptionSpec, Quote};
use crate::error::{config, Error, Result};
use crate::simulator::ScenarioSet;

/// Below this hedging-option gamma the gamma hedge falls back to a pure delta hedge.
pub const GAMMA_FLOOR: f64 = 1e-12;

/// The written option and the instruments available to hedge it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstrumentPanel {
    pub hedged: OptionSpec,
    pub hedgers: Vec<OptionSpec>,
}

impl InstrumentPanel {
    /// Hedged call with strike `k0`; hedging calls with the given strikes, all expiring at `maturity`.
    pub fn new(k0: f64, hedger_strikes: &[f64], maturity: f64) -> Result<Self> {
        let panel = Self {
            hedged: OptionSpec::new(k0, maturity, 0),
            hedgers: hedger_strikes
                .iter()
                .enumerate()
                .map(|(a, &k)| OptionSpec::new(k, maturity, a + 1))
                .collect(),
        };
        panel.validate()?;
        Ok(panel)
    }

    pub fn instruments(&self) -> usize {
        self.hedgers.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.hedgers.is_empty() {
            return Err(config("at least one hedging instrument is required"));
        }
        let t = self.hedged.maturity;
        if !(t > 0.0 && t.is_finite()) {
            return Err(config(format!("maturity must be positive, got {t}")));
        }
        for (a, h) in self.hedgers.iter().enumerate() {
            if h.maturity != t {
                return Err(config("all instruments must share one maturity"));
            }
            if h.index != a + 1 {
                return Err(config("hedging instruments must be indexed 1..=M in order"));
            }
        }
        for o in std::iter::once(&self.hedged).chain(&self.hedgers) {
            if !(o.strike >= 0.0 && o.strike.is_finite()) {
                return Err(config(format!("strike must be non-negative, got {}", o.strike)));
            }
        }
        Ok(())
    }

    /// Quotes of option 0 followed by each hedger.
    pub fn quotes(&self, spot: f64, mkt: &MarketParams, t: f64) -> Result<Vec<Quote>> {
        std::iter::once(&self.hedged)
            .chain(&self.hedgers)
            .map(|o| quote(spot, o, mkt, t))
            .collect()
    }

    fn require_underlying_first(&self) -> Result<()> {
        if self.hedgers[0].strike != 0.0 {
            return Err(config(
                "the first hedging instrument must have strike 0 (the underlying)",
            ));
        }
        Ok(())
    }
}

/// Holdings `q[path][i][α]` for timepoints `0..=n`; row `n` is always zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionSchedule {
    paths: usize,
    steps: usize,
    instruments: usize,
    q: Vec<f64>,
    fallback: Vec<bool>,
}

impl PositionSchedule {
    pub fn zeros(paths: usize, steps: usize, instruments: usize) -> Self {
        Self {
            paths,
            steps,
            instruments,
            q: vec![0.0; paths * (steps + 1) * instruments],
            fallback: vec![false; paths * (steps + 1)],
        }
    }

    /// Build from a flat `[path][i][α]` buffer covering timepoints `0..=n`.
    pub fn from_flat(paths: usize, steps: usize, instruments: usize, q: Vec<f64>) -> Result<Self> {
        if q.len() != paths * (steps + 1) * instruments {
            return Err(Error::Shape(format!(
                "{} positions for {paths} paths × {} points × {instruments} instruments",
                q.len(),
                steps + 1
            )));
        }
        Ok(Self {
            paths,
            steps,
            instruments,
            q,
            fallback: vec![false; paths * (steps + 1)],
        })
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn instruments(&self) -> usize {
        self.instruments
    }

    #[inline]
    fn offset(&self, path: usize, i: usize) -> usize {
        (path * (self.steps + 1) + i) * self.instruments
    }

    /// Holdings of every instrument at timepoint `i` of `path`.
    pub fn at(&self, path: usize, i: usize) -> &[f64] {
        let o = self.offset(path, i);
        &self.q[o..o + self.instruments]
    }

    pub fn at_mut(&mut self, path: usize, i: usize) -> &mut [f64] {
        let o = self.offset(path, i);
        let m = self.instruments;
        &mut self.q[o..o + m]
    }

    pub fn fallback(&self, path: usize, i: usize) -> bool {
        self.fallback[path * (self.steps + 1) + i]
    }

    pub fn fallback_count(&self) -> usize {
        self.fallback.iter().filter(|&&f| f).count()
    }

    /// Scale every holding, e.g. to probe linearity of the accounting.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.q.iter_mut().for_each(|q| *q *= factor);
        out
    }

    pub fn check_shape(&self, scenarios: &ScenarioSet, panel: &InstrumentPanel) -> Result<()> {
        if self.paths != scenarios.len()
            || self.steps != scenarios.grid.steps
            || self.instruments != panel.instruments()
        {
            return Err(Error::Shape(format!(
                "schedule is {}×{}×{}, scenarios/panel need {}×{}×{}",
                self.paths,
                self.steps + 1,
                self.instruments,
                scenarios.len(),
                scenarios.grid.points(),
                panel.instruments()
            )));
        }
        Ok(())
    }

    /// CSV rows `path_id, timepoint, q1..qM, fallback`.
    pub fn write_csv<W: Write>(&self, mut out: W, scenarios: &ScenarioSet, tag: &str) -> Result<()> {
        writeln!(out, "# {tag}")?;
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["path_id".to_string(), "timepoint".into()];
        header.extend((1..=self.instruments).map(|a| format!("q{a}")));
        header.push("fallback".into());
        w.write_record(&header)?;
        for p in 0..self.paths {
            for i in 0..=self.steps {
                let mut rec = vec![scenarios.path_id(p).to_string(), i.to_string()];
                rec.extend(self.at(p, i).iter().map(|q| q.to_string()));
                rec.push(u8::from(self.fallback(p, i)).to_string());
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Delta-hedge holdings at one point: `Δ⁰` units of the underlying, nothing else.
pub fn delta_positions(spot: f64, panel: &InstrumentPanel, mkt: &MarketParams, t: f64) -> Result<Vec<f64>> {
    panel.require_underlying_first()?;
    let mut q = vec![0.0; panel.instruments()];
    q[0] = quote(spot, &panel.hedged, mkt, t)?.delta;
    Ok(q)
}

/// Gamma-hedge holdings at one point, and whether the delta fallback fired.
///
/// `q² = Γ⁰/Γ²` and `q¹ = Δ⁰ − q²Δ²`. When `Γ² < GAMMA_FLOOR` the point is
/// delta hedged instead.
pub fn gamma_positions(spot: f64, panel: &InstrumentPanel, mkt: &MarketParams, t: f64) -> Result<([f64; 2], bool)> {
    check_gamma_panel(panel)?;
    let hedge = &panel.hedgers[1];
    let target = quote(spot, &panel.hedged, mkt, t)?;
    let option = quote(spot, hedge, mkt, t)?;
    if option.gamma < GAMMA_FLOOR {
        return Ok(([target.delta, 0.0], true));
    }
    let q2 = if panel.hedged.strike > 0.0 {
        gamma_ratio(spot, panel.hedged.strike, hedge.strike, mkt, panel.hedged.maturity - t)
    } else {
        0.0
    };
    Ok(([target.delta - q2 * option.delta, q2], false))
}

fn check_gamma_panel(panel: &InstrumentPanel) -> Result<()> {
    if panel.instruments() != 2 {
        return Err(config("gamma hedging needs exactly two hedging instruments"));
    }
    panel.require_underlying_first()?;
    if !(panel.hedgers[1].strike > 0.0) {
        return Err(config("the gamma-hedging instrument needs a positive strike"));
    }
    Ok(())
}

fn schedule_from<F>(scenarios: &ScenarioSet, panel: &InstrumentPanel, mut rule: F) -> Result<PositionSchedule>
where
    F: FnMut(f64, f64, &mut [f64]) -> Result<bool>,
{
    let grid = scenarios.grid;
    let mut sched = PositionSchedule::zeros(scenarios.len(), grid.steps, panel.instruments());
    for (p, path) in scenarios.paths().enumerate() {
        for i in 0..grid.steps {
            let fb = rule(path[i], grid.time(i), sched.at_mut(p, i))?;
            sched.fallback[p * (grid.steps + 1) + i] = fb;
        }
    }
    Ok(sched)
}

/// Hold `Δ⁰` of the underlying at every trading time.
pub fn delta_hedge(scenarios: &ScenarioSet, panel: &InstrumentPanel, mkt: &MarketParams) -> Result<PositionSchedule> {
    panel.require_underlying_first()?;
    schedule_from(scenarios, panel, |s, t, q| {
        q[0] = quote(s, &panel.hedged, mkt, t)?.delta;
        Ok(false)
    })
}

/// Neutralize portfolio gamma with option 2 and delta with the underlying.
pub fn gamma_hedge(scenarios: &ScenarioSet, panel: &InstrumentPanel, mkt: &MarketParams) -> Result<PositionSchedule> {
    check_gamma_panel(panel)?;
    schedule_from(scenarios, panel, |s, t, q| {
        let (pos, fb) = gamma_positions(s, panel, mkt, t)?;
        q.copy_from_slice(&pos);
        Ok(fb)
    })
}

/// Greeks of the hedge portfolio next to those of the hedged option.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GreekPoint {
    pub portfolio_delta: f64,
    pub portfolio_gamma: f64,
    pub target_delta: f64,
    pub target_gamma: f64,
}

/// Portfolio greeks for explicit holdings at one point.
pub fn greeks_for(q: &[f64], spot: f64, panel: &InstrumentPanel, mkt: &MarketParams, t: f64) -> Result<GreekPoint> {
    let quotes = panel.quotes(spot, mkt, t)?;
    let (mut pd, mut pg) = (0.0, 0.0);
    for (qa, v) in q.iter().zip(&quotes[1..]) {
        pd += qa * v.delta;
        pg += qa * v.gamma;
    }
    Ok(GreekPoint {
        portfolio_delta: pd,
        portfolio_gamma: pg,
        target_delta: quotes[0].delta,
        target_gamma: quotes[0].gamma,
    })
}

/// Portfolio greeks at every trading time, indexed `[path][i]` for `i < n`.
pub fn portfolio_greeks(
    schedule: &PositionSchedule,
    scenarios: &ScenarioSet,
    panel: &InstrumentPanel,
    mkt: &MarketParams,
) -> Result<Vec<Vec<GreekPoint>>> {
    schedule.check_shape(scenarios, panel)?;
    let grid = scenarios.grid;
    scenarios
        .paths()
        .enumerate()
        .map(|(p, path)| {
            (0..grid.steps)
                .map(|i| greeks_for(schedule.at(p, i), path[i], panel, mkt, grid.time(i)))
                .collect()
        })
        .collect()
}
