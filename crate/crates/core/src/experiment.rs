//! Experiment harness: the JSON configuration schema, the strategy
//! comparison table, greek surfaces, per-path traces and artifact output.
//!
//! Every artifact is a pure function of the configuration. CSV files start
//! with one `#` metadata line carrying the config hash and seeds; the rows
//! below it are byte-identical across reruns. Wall-clock figures only ever
//! appear in JSON metadata or separate timing files.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::accounting::{compute_pnl, CostSpec, PathValues, PnlReport};
use crate::analytics::MarketParams;
use crate::error::{config, domain, Error, Result};
use crate::neuralnet::{forward, policy_schedule, AdamConfig, NetParams, NetSpec, Objective, Variant};
use crate::simulator::{fixed_model, sample_scenario_range, uncertain_model, Law, ScenarioDistribution, ScenarioSet, TimeGrid};
use crate::strategies::{delta_hedge, gamma_hedge, gamma_positions, greeks_for, InstrumentPanel, PositionSchedule};
use crate::training::{config_hash, train, TrainConfig, TrainedPolicy};

/// Paths generated and evaluated at a time when streaming large evaluation sets.
pub const EVAL_CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "delta")]
    Delta,
    #[serde(rename = "gamma")]
    Gamma,
    /// Deep hedge trading the underlying only.
    #[serde(rename = "deep-1")]
    Deep1,
    /// Deep hedge trading the underlying and the second call.
    #[serde(rename = "deep-2")]
    Deep2,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Delta => "delta",
            Strategy::Gamma => "gamma",
            Strategy::Deep1 => "deep-1",
            Strategy::Deep2 => "deep-2",
        }
    }

    pub fn instruments(&self) -> usize {
        match self {
            Strategy::Delta | Strategy::Deep1 => 1,
            Strategy::Gamma | Strategy::Deep2 => 2,
        }
    }

    pub fn is_deep(&self) -> bool {
        matches!(self, Strategy::Deep1 | Strategy::Deep2)
    }
}

/// Proportional transaction-cost regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostRegime {
    None,
    /// Spreads of a liquid index ETF and a near-the-money index call.
    Normal,
    High,
}

impl CostRegime {
    pub fn name(&self) -> &'static str {
        match self {
            CostRegime::None => "none",
            CostRegime::Normal => "normal",
            CostRegime::High => "high",
        }
    }

    /// Cost fractions for (underlying, second call).
    pub fn fractions(&self) -> [f64; 2] {
        match self {
            CostRegime::None => [0.0, 0.0],
            CostRegime::Normal => [5e-5, 2.5e-3],
            CostRegime::High => [5e-3, 5e-3],
        }
    }
}

/// Scenario model: known dynamics, or drift and volatility drawn per path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Fixed,
    Uncertain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub sample_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden_widths: Vec<usize>,
    /// `None` picks the recurrent network whenever costs are charged.
    pub network: Option<Variant>,
    pub adam: AdamConfig,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            sample_size: 100_000,
            epochs: 20,
            batch_size: 256,
            hidden_widths: vec![100, 100, 100],
            network: None,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TableSection {
    pub objectives: Vec<Objective>,
    pub strategies: Vec<Strategy>,
    pub regimes: Vec<CostRegime>,
    pub workers: usize,
}

impl Default for TableSection {
    fn default() -> Self {
        Self {
            objectives: vec![Objective::MeanAbs, Objective::BatchMax],
            strategies: vec![Strategy::Delta, Strategy::Gamma],
            regimes: vec![CostRegime::None, CostRegime::Normal, CostRegime::High],
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurfaceSection {
    pub times: Vec<f64>,
    pub spot_lo: f64,
    pub spot_hi: f64,
    pub spot_count: usize,
}

impl Default for SurfaceSection {
    fn default() -> Self {
        Self {
            times: vec![0.1, 0.5],
            spot_lo: 0.6,
            spot_hi: 1.4,
            spot_count: 41,
        }
    }
}

impl SurfaceSection {
    pub fn spots(&self) -> Vec<f64> {
        match self.spot_count {
            0 => Vec::new(),
            1 => vec![self.spot_lo],
            n => (0..n)
                .map(|k| self.spot_lo + (self.spot_hi - self.spot_lo) * k as f64 / (n - 1) as f64)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceSection {
    /// Number of evaluation paths to trace, starting at `first_path`.
    pub paths: usize,
    pub first_path: u64,
}

impl Default for TraceSection {
    fn default() -> Self {
        Self { paths: 1, first_path: 0 }
    }
}

/// One experiment, as read from a JSON config file. Every key is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub strategy: Strategy,
    pub objective: Objective,
    /// Defaults to `fixed` for the mean objective and `uncertain` for the max objective.
    pub model: Option<Model>,
    pub cost_regime: CostRegime,
    /// Explicit per-instrument cost fractions; overrides `cost_regime`.
    pub cost_fraction: Option<Vec<f64>>,
    pub rate: f64,
    /// Volatility used for pricing and for the classical hedges.
    pub pricing_vol: f64,
    /// Path volatility under the fixed model.
    pub model_vol: f64,
    pub spot: Law,
    pub horizon: f64,
    pub maturity: f64,
    pub strike: f64,
    pub hedge_strike: f64,
    pub steps: usize,
    /// Paths in simulated, hedged and evaluated scenario sets.
    pub paths: usize,
    pub seed: u64,
    /// Seed of evaluation scenarios; derived from `seed` when absent.
    pub eval_seed: Option<u64>,
    pub out_dir: PathBuf,
    pub training: TrainingSection,
    pub table: TableSection,
    pub surface: SurfaceSection,
    pub trace: TraceSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Delta,
            objective: Objective::MeanAbs,
            model: None,
            cost_regime: CostRegime::None,
            cost_fraction: None,
            rate: 0.0,
            pricing_vol: 0.2,
            model_vol: 0.2,
            spot: Law::uniform(0.0, 2.0),
            horizon: 1.0,
            maturity: 1.4,
            strike: 1.0,
            hedge_strike: 1.1,
            steps: 40,
            paths: 100_000,
            seed: 1,
            eval_seed: None,
            out_dir: PathBuf::from("out"),
            training: TrainingSection::default(),
            table: TableSection::default(),
            surface: SurfaceSection::default(),
            trace: TraceSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.paths == 0 {
            return Err(config("paths must be at least 1"));
        }
        if self.eval_seed() == self.seed {
            return Err(config("evaluation seed must differ from the training seed"));
        }
        if let Some(f) = &self.cost_fraction {
            if f.len() != 2 {
                return Err(config("cost_fraction lists one fraction per instrument: [underlying, call]"));
            }
            CostSpec::new(f.clone())?;
        }
        if !(self.hedge_strike > 0.0) {
            return Err(config("the second hedging call needs a positive strike"));
        }
        if self.table.workers == 0 {
            return Err(config("table workers must be at least 1"));
        }
        self.grid()?;
        self.market()?;
        self.distribution(self.objective)?.validate()?;
        self.panel(2)?;
        Ok(())
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }

    pub fn eval_seed(&self) -> u64 {
        self.eval_seed.unwrap_or(self.seed.wrapping_add(0x5EED_0000_0001))
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.horizon, self.steps)
    }

    pub fn market(&self) -> Result<MarketParams> {
        MarketParams::new(self.rate, self.pricing_vol)
    }

    pub fn model_for(&self, objective: Objective) -> Model {
        self.model.unwrap_or(match objective {
            Objective::MeanAbs => Model::Fixed,
            Objective::BatchMax => Model::Uncertain,
        })
    }

    pub fn distribution(&self, objective: Objective) -> Result<ScenarioDistribution> {
        match self.model_for(objective) {
            Model::Fixed => fixed_model(self.model_vol, 0.0, self.spot),
            Model::Uncertain => Ok(ScenarioDistribution {
                spot: self.spot,
                ..uncertain_model()
            }),
        }
    }

    /// The hedged call and `instruments` hedgers: the underlying, then the second call.
    pub fn panel(&self, instruments: usize) -> Result<InstrumentPanel> {
        match instruments {
            1 => InstrumentPanel::new(self.strike, &[0.0], self.maturity),
            2 => InstrumentPanel::new(self.strike, &[0.0, self.hedge_strike], self.maturity),
            m => Err(config(format!("{m} hedging instruments; only 1 or 2 are supported"))),
        }
    }

    pub fn costs(&self, regime: CostRegime, instruments: usize) -> Result<CostSpec> {
        let all = match &self.cost_fraction {
            Some(f) => f.clone(),
            None => regime.fractions().to_vec(),
        };
        CostSpec::new(all[..instruments].to_vec())
    }

    /// Training configuration of a deep strategy cell.
    pub fn train_config(&self, strategy: Strategy, objective: Objective, regime: CostRegime) -> Result<TrainConfig> {
        if !strategy.is_deep() {
            return Err(config(format!("strategy {} is not trained", strategy.name())));
        }
        let m = strategy.instruments();
        let costs = self.costs(regime, m)?;
        let variant = self.training.network.unwrap_or(if costs.is_zero() {
            Variant::Feedforward
        } else {
            Variant::Recurrent
        });
        let net = match variant {
            Variant::Feedforward => NetSpec::feedforward(m),
            Variant::Recurrent => NetSpec::recurrent(m),
        }
        .with_widths(self.training.hidden_widths.clone());
        let cfg = TrainConfig {
            net,
            scenario_dist: self.distribution(objective)?,
            grid: self.grid()?,
            panel: self.panel(m)?,
            market: self.market()?,
            costs,
            objective,
            sample_size: self.training.sample_size,
            epochs: self.training.epochs,
            batch_size: self.training.batch_size,
            seed: self.seed,
            adam: self.training.adam,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `# …` metadata line shared by every CSV this configuration emits.
    pub fn tag(&self) -> String {
        format!("config_hash={} seed={} eval_seed={}", self.hash(), self.seed, self.eval_seed())
    }
}

/// Something that chooses positions: a classical rule or a trained policy.
#[derive(Debug, Clone)]
pub enum Hedger {
    Classical(Strategy),
    Policy { policy: Box<TrainedPolicy>, params: Box<NetParams> },
}

impl Hedger {
    pub fn classical(strategy: Strategy) -> Result<Self> {
        if strategy.is_deep() {
            return Err(config(format!("{} needs a trained policy", strategy.name())));
        }
        Ok(Hedger::Classical(strategy))
    }

    pub fn policy(policy: TrainedPolicy) -> Result<Self> {
        let params = Box::new(policy.params()?);
        Ok(Hedger::Policy {
            policy: Box::new(policy),
            params,
        })
    }

    pub fn instruments(&self) -> usize {
        match self {
            Hedger::Classical(s) => s.instruments(),
            Hedger::Policy { policy, .. } => policy.spec().output_dim,
        }
    }

    pub fn schedule(&self, scenarios: &ScenarioSet, panel: &InstrumentPanel, mkt: &MarketParams) -> Result<PositionSchedule> {
        match self {
            Hedger::Classical(Strategy::Delta) => delta_hedge(scenarios, panel, mkt),
            Hedger::Classical(Strategy::Gamma) => gamma_hedge(scenarios, panel, mkt),
            Hedger::Classical(s) => Err(config(format!("{} needs a trained policy", s.name()))),
            Hedger::Policy { policy, params } => {
                if scenarios.grid != policy.config.grid {
                    return Err(domain("scenario grid differs from the policy's training grid"));
                }
                policy_schedule(params, policy.spec(), scenarios)
            }
        }
    }
}

/// Generate `count` paths in chunks and account the hedger on each chunk.
pub fn evaluate_streamed(
    hedger: &Hedger,
    dist: &ScenarioDistribution,
    grid: TimeGrid,
    count: usize,
    seed: u64,
    panel: &InstrumentPanel,
    mkt: &MarketParams,
    costs: &CostSpec,
) -> Result<PnlReport> {
    let mut report: Option<PnlReport> = None;
    let mut first = 0usize;
    while first < count {
        let n = EVAL_CHUNK.min(count - first);
        let chunk = sample_scenario_range(dist, grid, first as u64, n, seed)?;
        let sched = hedger.schedule(&chunk, panel, mkt)?;
        let part = compute_pnl(&sched, &chunk, panel, mkt, costs)?;
        match report.as_mut() {
            Some(r) => r.extend(part)?,
            None => report = Some(part),
        }
        first += n;
    }
    report.ok_or_else(|| domain("evaluation needs at least one path"))
}

/// Train a deep strategy as configured.
pub fn train_policy(cfg: &ExperimentConfig) -> Result<TrainedPolicy> {
    train(&cfg.train_config(cfg.strategy, cfg.objective, cfg.cost_regime)?)
}

/// Out-of-sample evaluation of a trained policy on `cfg.paths` fresh paths.
pub fn evaluate_policy(policy: &TrainedPolicy, cfg: &ExperimentConfig) -> Result<PnlReport> {
    let eval_seed = cfg.eval_seed();
    if eval_seed == policy.config.seed {
        return Err(config("evaluation seed equals the policy's training seed"));
    }
    let tc = &policy.config;
    let hedger = Hedger::policy(policy.clone())?;
    evaluate_streamed(&hedger, &tc.scenario_dist, tc.grid, cfg.paths, eval_seed, &tc.panel, &tc.market, &tc.costs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableCell {
    pub objective: Objective,
    pub strategy: Strategy,
    pub regime: CostRegime,
    pub cost_fraction: Vec<f64>,
    pub loss_mean: Option<f64>,
    pub loss_max: Option<f64>,
    /// The loss under the cell's own objective.
    pub loss: Option<f64>,
    pub error: Option<String>,
}

impl TableCell {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub config_hash: String,
    pub seed: u64,
    pub eval_seed: u64,
    pub paths: usize,
    pub steps: usize,
    pub runtime_seconds: f64,
    pub cells: Vec<TableCell>,
}

impl ResultTable {
    pub fn any_failed(&self) -> bool {
        self.cells.iter().any(TableCell::failed)
    }

    pub fn cell(&self, objective: Objective, strategy: Strategy, regime: CostRegime) -> Option<&TableCell> {
        self.cells
            .iter()
            .find(|c| c.objective == objective && c.strategy == strategy && c.regime == regime)
    }

    /// CSV rows `objective, strategy, regime, loss_mean, loss_max, loss, status`.
    pub fn write_csv<W: Write>(&self, mut out: W, tag: &str) -> Result<()> {
        writeln!(out, "# {tag} paths={} steps={}", self.paths, self.steps)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["objective", "strategy", "regime", "loss_mean", "loss_max", "loss", "status"])?;
        let num = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for c in &self.cells {
            w.write_record([
                c.objective.name().to_string(),
                c.strategy.name().to_string(),
                c.regime.name().to_string(),
                num(c.loss_mean),
                num(c.loss_max),
                num(c.loss),
                if c.failed() { "failed".into() } else { "ok".into() },
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn run_cell(cfg: &ExperimentConfig, objective: Objective, strategy: Strategy, regime: CostRegime) -> Result<PnlReport> {
    let m = strategy.instruments();
    let hedger = if strategy.is_deep() {
        Hedger::policy(train(&cfg.train_config(strategy, objective, regime)?)?)?
    } else {
        Hedger::classical(strategy)?
    };
    let dist = cfg.distribution(objective)?;
    evaluate_streamed(
        &hedger,
        &dist,
        cfg.grid()?,
        cfg.paths,
        cfg.eval_seed(),
        &cfg.panel(m)?,
        &cfg.market()?,
        &cfg.costs(regime, m)?,
    )
}

/// Evaluate every (objective, strategy, regime) cell.
///
/// All cells of one objective see the same evaluation paths (same model,
/// same evaluation seed). Deep cells train their own policy first. A cell
/// that fails is recorded with its error and the rest still run.
pub fn run_table(cfg: &ExperimentConfig) -> Result<ResultTable> {
    cfg.validate()?;
    let started = Instant::now();
    let t = &cfg.table;
    let mut keys = Vec::new();
    for &o in &t.objectives {
        for &s in &t.strategies {
            for &r in &t.regimes {
                keys.push((o, s, r));
            }
        }
    }
    let results: Mutex<Vec<Option<TableCell>>> = Mutex::new(vec![None; keys.len()]);
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..t.workers.min(keys.len()).max(1) {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(objective, strategy, regime)) = keys.get(k) else { break };
                let fractions = cfg
                    .costs(regime, strategy.instruments())
                    .map(|c| c.fractions)
                    .unwrap_or_default();
                let cell = match run_cell(cfg, objective, strategy, regime) {
                    Ok(rep) => TableCell {
                        objective,
                        strategy,
                        regime,
                        cost_fraction: fractions,
                        loss_mean: Some(rep.loss_mean),
                        loss_max: Some(rep.loss_max),
                        loss: Some(match objective {
                            Objective::MeanAbs => rep.loss_mean,
                            Objective::BatchMax => rep.loss_max,
                        }),
                        error: None,
                    },
                    Err(e) => TableCell {
                        objective,
                        strategy,
                        regime,
                        cost_fraction: fractions,
                        loss_mean: None,
                        loss_max: None,
                        loss: None,
                        error: Some(e.to_string()),
                    },
                };
                results.lock().expect("no poisoned workers")[k] = Some(cell);
            });
        }
    });
    let cells = results
        .into_inner()
        .expect("no poisoned workers")
        .into_iter()
        .map(|c| c.expect("every cell ran"))
        .collect();
    Ok(ResultTable {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        eval_seed: cfg.eval_seed(),
        paths: cfg.paths,
        steps: cfg.steps,
        runtime_seconds: started.elapsed().as_secs_f64(),
        cells,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceRow {
    pub t: f64,
    pub spot: f64,
    pub portfolio_delta: f64,
    pub portfolio_gamma: f64,
    pub target_delta: f64,
    pub target_gamma: f64,
}

/// Holdings of the hedger at one `(t, S)` point.
///
/// A recurrent policy first runs along the constant-price prefix `S` at every
/// trading time before `t`; its surface therefore depends on that convention.
pub fn holdings_at(hedger: &Hedger, t: f64, spot: f64, panel: &InstrumentPanel, mkt: &MarketParams, grid: &TimeGrid) -> Result<Vec<f64>> {
    match hedger {
        Hedger::Classical(Strategy::Delta) => crate::strategies::delta_positions(spot, panel, mkt, t),
        Hedger::Classical(Strategy::Gamma) => Ok(gamma_positions(spot, panel, mkt, t)?.0.to_vec()),
        Hedger::Classical(s) => Err(config(format!("{} needs a trained policy", s.name()))),
        Hedger::Policy { policy, params } => {
            let spec = policy.spec();
            let horizon = grid.horizon;
            let mut state: Option<Vec<f64>> = None;
            if spec.is_recurrent() {
                for i in 0..grid.steps {
                    let ti = grid.time(i);
                    if ti >= t - 1e-12 {
                        break;
                    }
                    state = forward(params, spec, [ti / horizon, spot], state.as_deref())?.1;
                }
            }
            Ok(forward(params, spec, [t / horizon, spot], state.as_deref())?.0)
        }
    }
}

/// Portfolio and target greeks over a `(t, S)` grid inside `(0, T′) × (0, 2]`.
pub fn run_surface(hedger: &Hedger, cfg: &ExperimentConfig, times: &[f64], spots: &[f64]) -> Result<Vec<SurfaceRow>> {
    let grid = match hedger {
        Hedger::Policy { policy, .. } => policy.config.grid,
        Hedger::Classical(_) => cfg.grid()?,
    };
    let (panel, mkt) = match hedger {
        Hedger::Policy { policy, .. } => (policy.config.panel.clone(), policy.config.market),
        Hedger::Classical(s) => (cfg.panel(s.instruments())?, cfg.market()?),
    };
    for &t in times {
        if !(t > 0.0 && t < grid.horizon) {
            return Err(domain(format!("surface time {t} outside (0, {}))", grid.horizon)));
        }
    }
    for &s in spots {
        if !(s > 0.0 && s <= 2.0) {
            return Err(domain(format!("surface spot {s} outside (0, 2]")));
        }
    }
    let mut rows = Vec::with_capacity(times.len() * spots.len());
    for &t in times {
        for &s in spots {
            let q = holdings_at(hedger, t, s, &panel, &mkt, &grid)?;
            let g = greeks_for(&q, s, &panel, &mkt, t)?;
            rows.push(SurfaceRow {
                t,
                spot: s,
                portfolio_delta: g.portfolio_delta,
                portfolio_gamma: g.portfolio_gamma,
                target_delta: g.target_delta,
                target_gamma: g.target_gamma,
            });
        }
    }
    Ok(rows)
}

pub fn write_surface_csv<W: Write>(rows: &[SurfaceRow], mut out: W, tag: &str) -> Result<()> {
    writeln!(out, "# {tag}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "s", "portfolio_delta", "portfolio_gamma", "delta0", "gamma0"])?;
    for r in rows {
        w.write_record(
            [r.t, r.spot, r.portfolio_delta, r.portfolio_gamma, r.target_delta, r.target_gamma].map(|v| v.to_string()),
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Holdings, greeks and running cost of one strategy at one timepoint.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TraceLeg {
    pub q: [f64; 2],
    pub portfolio_delta: f64,
    pub portfolio_gamma: f64,
    pub cumulative_cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub path_id: u64,
    pub t: f64,
    pub spot: f64,
    pub target_delta: f64,
    pub target_gamma: f64,
    pub strategy: TraceLeg,
    /// The gamma hedge on the same path, with the same cost regime.
    pub benchmark: TraceLeg,
}

fn trace_legs(
    sched: &PositionSchedule,
    scenarios: &ScenarioSet,
    panel: &InstrumentPanel,
    mkt: &MarketParams,
    costs: &CostSpec,
) -> Result<Vec<Vec<TraceLeg>>> {
    let grid = scenarios.grid;
    let mut out = Vec::with_capacity(scenarios.len());
    for (p, path) in scenarios.paths().enumerate() {
        let values = PathValues::new(path, panel, mkt, &grid)?;
        let mut cum = 0.0;
        let mut legs = Vec::with_capacity(grid.points());
        for i in 0..=grid.steps {
            let q = sched.at(p, i);
            for (a, &frac) in costs.fractions.iter().enumerate() {
                let prev = if i == 0 { 0.0 } else { sched.at(p, i - 1)[a] };
                cum += frac * values.get(i, a + 1).abs() * (q[a] - prev).abs();
            }
            let g = greeks_for(q, path[i], panel, mkt, grid.time(i))?;
            let mut q2 = [0.0; 2];
            q2[..q.len()].copy_from_slice(q);
            legs.push(TraceLeg {
                q: q2,
                portfolio_delta: g.portfolio_delta,
                portfolio_gamma: g.portfolio_gamma,
                cumulative_cost: cum,
            });
        }
        out.push(legs);
    }
    Ok(out)
}

/// Per-timepoint trace of a hedger and of the gamma benchmark on the same paths.
pub fn run_path_trace(hedger: &Hedger, cfg: &ExperimentConfig, scenarios: &ScenarioSet) -> Result<Vec<TraceRow>> {
    let (panel, mkt, costs) = match hedger {
        Hedger::Policy { policy, .. } => {
            let c = &policy.config;
            (c.panel.clone(), c.market, c.costs.clone())
        }
        Hedger::Classical(s) => {
            let m = s.instruments();
            (cfg.panel(m)?, cfg.market()?, cfg.costs(cfg.cost_regime, m)?)
        }
    };
    let bench_panel = InstrumentPanel::new(panel.hedged.strike, &[0.0, cfg.hedge_strike], panel.hedged.maturity)?;
    let bench_costs = match &cfg.cost_fraction {
        Some(f) => CostSpec::new(f.clone())?,
        None if costs.fractions.len() == 2 => costs.clone(),
        None => CostSpec::new(cfg.cost_regime.fractions().to_vec())?,
    };
    let sched = hedger.schedule(scenarios, &panel, &mkt)?;
    let bench = gamma_hedge(scenarios, &bench_panel, &mkt)?;
    let legs = trace_legs(&sched, scenarios, &panel, &mkt, &costs)?;
    let bench_legs = trace_legs(&bench, scenarios, &bench_panel, &mkt, &bench_costs)?;
    let grid = scenarios.grid;
    let mut rows = Vec::new();
    for (p, path) in scenarios.paths().enumerate() {
        for i in 0..=grid.steps {
            let t = grid.time(i);
            let target = crate::analytics::quote(path[i], &panel.hedged, &mkt, t)?;
            rows.push(TraceRow {
                path_id: scenarios.path_id(p),
                t,
                spot: path[i],
                target_delta: target.delta,
                target_gamma: target.gamma,
                strategy: legs[p][i],
                benchmark: bench_legs[p][i],
            });
        }
    }
    Ok(rows)
}

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], mut out: W, tag: &str) -> Result<()> {
    writeln!(out, "# {tag}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "path_id", "t", "s", "q1", "q2", "portfolio_delta", "portfolio_gamma", "delta0", "gamma0", "cumulative_cost",
        "gamma_q1", "gamma_q2", "gamma_portfolio_delta", "gamma_portfolio_gamma", "gamma_cumulative_cost",
    ])?;
    for r in rows {
        let (a, b) = (&r.strategy, &r.benchmark);
        let mut rec = vec![r.path_id.to_string()];
        rec.extend(
            [
                r.t,
                r.spot,
                a.q[0],
                a.q[1],
                a.portfolio_delta,
                a.portfolio_gamma,
                r.target_delta,
                r.target_gamma,
                a.cumulative_cost,
                b.q[0],
                b.q[1],
                b.portfolio_delta,
                b.portfolio_gamma,
                b.cumulative_cost,
            ]
            .map(|v| v.to_string()),
        );
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Write a file by filling a temporary sibling and renaming it into place.
pub fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| Error::Io(std::io::Error::other(format!("not a file path: {}", path.display()))))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        fill(&mut w)?;
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            steps: 8,
            paths: 300,
            ..Default::default()
        }
    }

    #[test]
    fn schema_defaults_and_rejections() {
        let cfg = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        let cfg = ExperimentConfig::from_json(r#"{"strategy": "deep-2", "cost_regime": "normal"}"#).unwrap();
        assert_eq!(cfg.costs(cfg.cost_regime, 2).unwrap().fractions, vec![5e-5, 2.5e-3]);
        assert_eq!(cfg.costs(CostRegime::High, 1).unwrap().fractions, vec![5e-3]);
        assert!(matches!(ExperimentConfig::from_json(r#"{"stratgy": "delta"}"#), Err(Error::Json(_))));
        assert!(ExperimentConfig::from_json(r#"{"seed": 5, "eval_seed": 5}"#).unwrap_err().is_config());
        assert!(ExperimentConfig::from_json(r#"{"steps": 0}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"cost_fraction": [0.1]}"#).is_err());
    }

    #[test]
    fn models_follow_objective() {
        let cfg = small();
        assert_eq!(cfg.model_for(Objective::MeanAbs), Model::Fixed);
        assert_eq!(cfg.model_for(Objective::BatchMax), Model::Uncertain);
        let d = cfg.distribution(Objective::BatchMax).unwrap();
        assert_eq!(d.vol, Law::uniform(0.0, 0.3));
    }

    #[test]
    fn one_path_one_step_table_is_finite() {
        let cfg = ExperimentConfig {
            steps: 1,
            paths: 1,
            ..Default::default()
        };
        let table = run_table(&cfg).unwrap();
        assert_eq!(table.cells.len(), 2 * 2 * 3);
        for c in &table.cells {
            assert!(!c.failed(), "{c:?}");
            assert!(c.loss.unwrap().is_finite() && c.loss.unwrap() >= 0.0);
        }
    }

    #[test]
    fn table_is_independent_of_worker_count() {
        let mut cfg = small();
        let a = run_table(&cfg).unwrap();
        cfg.table.workers = 3;
        let b = run_table(&cfg).unwrap();
        assert_eq!(a.cells, b.cells);
    }

    #[test]
    fn failing_cell_is_marked() {
        let mut cfg = small();
        cfg.rate = 0.01;
        cfg.table.objectives = vec![Objective::MeanAbs];
        cfg.table.regimes = vec![CostRegime::None, CostRegime::High];
        let table = run_table(&cfg).unwrap();
        assert!(table.any_failed());
        assert!(!table.cell(Objective::MeanAbs, Strategy::Delta, CostRegime::None).unwrap().failed());
        assert!(table.cell(Objective::MeanAbs, Strategy::Delta, CostRegime::High).unwrap().failed());
    }

    #[test]
    fn classical_surfaces() {
        let cfg = small();
        let spots = cfg.surface.spots();
        let gamma = run_surface(&Hedger::Classical(Strategy::Gamma), &cfg, &[0.1, 0.5], &spots).unwrap();
        for r in &gamma {
            assert!((r.portfolio_gamma - r.target_gamma).abs() <= 1e-12 * r.target_gamma.max(1.0));
            assert!((r.portfolio_delta - r.target_delta).abs() < 1e-12);
        }
        let delta = run_surface(&Hedger::Classical(Strategy::Delta), &cfg, &[0.5], &spots).unwrap();
        assert!(delta.iter().all(|r| r.portfolio_gamma == 0.0));
        assert!(matches!(
            run_surface(&Hedger::Classical(Strategy::Delta), &cfg, &[1.0], &spots),
            Err(Error::Domain(_))
        ));
        assert!(run_surface(&Hedger::Classical(Strategy::Delta), &cfg, &[0.5], &[2.5]).is_err());
    }

    #[test]
    fn constant_path_trace_decays_smoothly() {
        let mut cfg = small();
        cfg.model_vol = 0.0;
        cfg.spot = Law::fixed(1.0);
        let scen = sample_scenario_range(&cfg.distribution(Objective::MeanAbs).unwrap(), cfg.grid().unwrap(), 0, 1, 9).unwrap();
        let rows = run_path_trace(&Hedger::Classical(Strategy::Delta), &cfg, &scen).unwrap();
        assert_eq!(rows.len(), cfg.steps + 1);
        for w in rows[..cfg.steps].windows(2) {
            assert!(w[1].strategy.q[0] <= w[0].strategy.q[0]);
            assert!((w[1].strategy.q[0] - w[0].strategy.q[0]).abs() < 0.01);
        }
        for r in &rows[..cfg.steps] {
            assert!((r.benchmark.portfolio_gamma - r.target_gamma).abs() < 1e-12);
            assert!((r.benchmark.portfolio_delta - r.target_delta).abs() < 1e-12);
        }
        assert_eq!(rows[cfg.steps].strategy.q, [0.0, 0.0]);
    }

    #[test]
    fn atomic_write_leaves_no_temporary() {
        let dir = std::env::temp_dir().join(format!("hedgelab-atomic-{}", std::process::id()));
        let path = dir.join("x.csv");
        write_atomic(&path, |w| Ok(writeln!(w, "a,b")?)).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "a,b\n");
        assert_eq!(fs::read_dir(&dir).unwrap().count(), 1);
        fs::remove_dir_all(dir).unwrap();
    }
}
