//! `hedgelab`: simulate scenarios, run classical and deep hedges, and emit
//! tables, greek surfaces and path traces as CSV/JSON.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure, 1 anything else.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use hedgelab::accounting::{compute_pnl, PnlReport, PnlSummary};
use hedgelab::experiment::{
    evaluate_policy, evaluate_streamed, run_path_trace, run_surface, run_table, write_atomic,
    write_json_atomic, write_surface_csv, write_trace_csv, CostRegime, ExperimentConfig, Hedger, Model, Strategy,
};
use hedgelab::neuralnet::Objective;
use hedgelab::simulator::{sample_scenario_range, sample_scenarios};
use hedgelab::training::{train_with_progress, TrainedPolicy};

#[derive(Parser, Debug)]
#[command(name = "hedgelab", version, about = "Deep hedging laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a scenario set and write it as CSV.
    Simulate(Common),
    /// Run the delta or gamma hedge and account its PnL.
    Hedge {
        #[command(flatten)]
        common: Common,
        /// Also write the full position schedule.
        #[arg(long)]
        positions: bool,
    },
    /// Train a deep hedging policy.
    Train(Common),
    /// Evaluate a trained policy on fresh paths.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        policy: PathBuf,
    },
    /// Evaluate every (objective, strategy, cost regime) cell.
    Table(Common),
    /// Portfolio vs. target greeks on a (t, S) grid.
    Surface {
        #[command(flatten)]
        common: Common,
        /// Trained policy; the configured classical strategy is used when absent.
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Per-timepoint positions, greeks and costs along evaluation paths.
    Trace {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        policy: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON experiment configuration; defaults apply to missing keys.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eval_seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    /// delta | gamma | deep-1 | deep-2
    #[arg(long)]
    strategy: Option<String>,
    /// mean_abs | batch_max
    #[arg(long)]
    objective: Option<String>,
    /// fixed | uncertain
    #[arg(long)]
    model: Option<String>,
    /// none | normal | high
    #[arg(long)]
    cost_regime: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    sample_size: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
}

fn parse_enum<T: serde::de::DeserializeOwned>(flag: &str, value: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(value.to_string()))
        .map_err(|_| hedgelab::Error::Config(format!("invalid value {value:?} for --{flag}")).into())
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.eval_seed {
            cfg.eval_seed = Some(v);
        }
        if let Some(v) = &self.out_dir {
            cfg.out_dir = v.clone();
        }
        if let Some(v) = self.paths {
            cfg.paths = v;
        }
        if let Some(v) = self.steps {
            cfg.steps = v;
        }
        if let Some(v) = &self.strategy {
            cfg.strategy = parse_enum::<Strategy>("strategy", v)?;
        }
        if let Some(v) = &self.objective {
            cfg.objective = parse_enum::<Objective>("objective", v)?;
        }
        if let Some(v) = &self.model {
            cfg.model = Some(parse_enum::<Model>("model", v)?);
        }
        if let Some(v) = &self.cost_regime {
            cfg.cost_regime = parse_enum::<CostRegime>("cost-regime", v)?;
        }
        if let Some(v) = self.epochs {
            cfg.training.epochs = v;
        }
        if let Some(v) = self.sample_size {
            cfg.training.sample_size = v;
        }
        if let Some(v) = self.workers {
            cfg.table.workers = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// JSON summary of a PnL report with the run's identifying metadata.
#[derive(Serialize)]
struct RunSummary<'a> {
    #[serde(flatten)]
    pnl: PnlSummary,
    strategy: &'a str,
    cost_regime: &'a str,
    seed: u64,
    eval_seed: u64,
    steps: usize,
}

fn write_pnl(cfg: &ExperimentConfig, report: &PnlReport, stem: &str, strategy: &str, hash: &str) -> Result<()> {
    let tag = cfg.tag();
    write_atomic(&cfg.out_dir.join(format!("{stem}.csv")), |w| report.write_csv(w, &tag))?;
    let summary = RunSummary {
        pnl: report.summary(hash),
        strategy,
        cost_regime: cfg.cost_regime.name(),
        seed: cfg.seed,
        eval_seed: cfg.eval_seed(),
        steps: cfg.steps,
    };
    write_json_atomic(&cfg.out_dir.join(format!("{stem}_summary.json")), &summary)?;
    eprintln!(
        "{strategy}: loss_mean = {:.6e}, loss_max = {:.6e} over {} paths",
        report.loss_mean,
        report.loss_max,
        report.len()
    );
    Ok(())
}

fn load_policy(path: &Path) -> Result<TrainedPolicy> {
    TrainedPolicy::load(path).with_context(|| format!("loading policy {}", path.display()))
}

fn hedger_for(cfg: &ExperimentConfig, policy: Option<&PathBuf>) -> Result<Hedger> {
    Ok(match policy {
        Some(p) => Hedger::policy(load_policy(p)?)?,
        None => Hedger::classical(cfg.strategy)?,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(c) => {
            let cfg = c.load()?;
            let dist = cfg.distribution(cfg.objective)?;
            let scen = sample_scenarios(&dist, cfg.grid()?, cfg.paths, cfg.seed)?;
            let tag = cfg.tag();
            write_atomic(&cfg.out_dir.join("scenarios.csv"), |w| scen.write_csv(w, &tag))?;
            eprintln!("wrote {} paths of {} steps", scen.len(), cfg.steps);
        }
        Command::Hedge { common, positions } => {
            let cfg = common.load()?;
            let hedger = Hedger::classical(cfg.strategy)?;
            let m = cfg.strategy.instruments();
            let (panel, mkt, costs) = (cfg.panel(m)?, cfg.market()?, cfg.costs(cfg.cost_regime, m)?);
            let dist = cfg.distribution(cfg.objective)?;
            let report = if positions {
                let scen = sample_scenario_range(&dist, cfg.grid()?, 0, cfg.paths, cfg.seed)?;
                let sched = hedger.schedule(&scen, &panel, &mkt)?;
                let tag = cfg.tag();
                write_atomic(&cfg.out_dir.join("positions.csv"), |w| sched.write_csv(w, &scen, &tag))?;
                compute_pnl(&sched, &scen, &panel, &mkt, &costs)?
            } else {
                evaluate_streamed(&hedger, &dist, cfg.grid()?, cfg.paths, cfg.seed, &panel, &mkt, &costs)?
            };
            write_pnl(&cfg, &report, "pnl", cfg.strategy.name(), &cfg.hash())?;
        }
        Command::Train(c) => {
            let cfg = c.load()?;
            let tc = cfg.train_config(cfg.strategy, cfg.objective, cfg.cost_regime)?;
            eprintln!(
                "training {} ({} parameters, {} Adam steps)",
                cfg.strategy.name(),
                tc.net.param_count(),
                tc.total_steps()
            );
            let policy = match train_with_progress(&tc, |e| {
                eprintln!(
                    "epoch {:>3}: objective {:.6e}  mean |pnl| {:.6e}  max |pnl| {:.6e}  ({:.1}s)",
                    e.epoch, e.objective, e.mean_loss, e.max_loss, e.wall_seconds
                )
            }) {
                Ok(p) => p,
                Err(hedgelab::Error::Diverged { epoch, batch, checkpoint }) => {
                    checkpoint.save(&cfg.out_dir.join("checkpoint_last_finite.json"))?;
                    return Err(hedgelab::Error::Diverged { epoch, batch, checkpoint }.into());
                }
                Err(e) => return Err(e.into()),
            };
            std::fs::create_dir_all(&cfg.out_dir)?;
            policy.save(&cfg.out_dir.join("policy.json"))?;
            policy.checkpoint.save(&cfg.out_dir.join("checkpoint.json"))?;
            write_atomic(&cfg.out_dir.join("telemetry.csv"), |w| policy.write_telemetry(w))?;
            write_atomic(&cfg.out_dir.join("timing.csv"), |w| policy.write_timing(w))?;
        }
        Command::Evaluate { common, policy } => {
            let cfg = common.load()?;
            let p = load_policy(&policy)?;
            let report = evaluate_policy(&p, &cfg)?;
            let name = if p.spec().output_dim == 1 { "deep-1" } else { "deep-2" };
            write_pnl(&cfg, &report, "eval", name, &p.checkpoint.config_hash)?;
        }
        Command::Table(c) => {
            let cfg = c.load()?;
            let table = run_table(&cfg)?;
            let tag = cfg.tag();
            write_atomic(&cfg.out_dir.join("table.csv"), |w| table.write_csv(w, &tag))?;
            write_json_atomic(&cfg.out_dir.join("table.json"), &table)?;
            for cell in &table.cells {
                match (&cell.loss, &cell.error) {
                    (Some(l), _) => eprintln!(
                        "{:<5} {:<7} {:<7} {:.4e}",
                        cell.objective.name(),
                        cell.strategy.name(),
                        cell.regime.name(),
                        l
                    ),
                    (None, e) => eprintln!(
                        "{:<5} {:<7} {:<7} FAILED: {}",
                        cell.objective.name(),
                        cell.strategy.name(),
                        cell.regime.name(),
                        e.as_deref().unwrap_or("")
                    ),
                }
            }
            if table.any_failed() {
                return Err(TableFailed.into());
            }
        }
        Command::Surface { common, policy } => {
            let cfg = common.load()?;
            let hedger = hedger_for(&cfg, policy.as_ref())?;
            let rows = run_surface(&hedger, &cfg, &cfg.surface.times, &cfg.surface.spots())?;
            let mut tag = cfg.tag();
            if let Hedger::Policy { policy, .. } = &hedger {
                tag.push_str(&format!(" policy_hash={}", policy.checkpoint.config_hash));
                if policy.spec().is_recurrent() {
                    tag.push_str(" state=constant_price_prefix");
                }
            }
            write_atomic(&cfg.out_dir.join("surface.csv"), |w| write_surface_csv(&rows, w, &tag))?;
        }
        Command::Trace { common, policy } => {
            let cfg = common.load()?;
            let hedger = hedger_for(&cfg, policy.as_ref())?;
            if cfg.trace.paths == 0 {
                bail!(hedgelab::Error::Config("trace needs at least one path".into()));
            }
            let (dist, grid) = match &hedger {
                Hedger::Policy { policy, .. } => (policy.config.scenario_dist, policy.config.grid),
                Hedger::Classical(_) => (cfg.distribution(cfg.objective)?, cfg.grid()?),
            };
            let scen = sample_scenario_range(&dist, grid, cfg.trace.first_path, cfg.trace.paths, cfg.eval_seed())?;
            let rows = run_path_trace(&hedger, &cfg, &scen)?;
            let tag = cfg.tag();
            write_atomic(&cfg.out_dir.join("trace.csv"), |w| write_trace_csv(&rows, w, &tag))?;
        }
    }
    Ok(())
}

#[derive(Debug)]
struct TableFailed;

impl std::fmt::Display for TableFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("one or more table cells failed")
    }
}

impl std::error::Error for TableFailed {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.is::<TableFailed>() {
        return 3;
    }
    match err.chain().find_map(|e| e.downcast_ref::<hedgelab::Error>()) {
        Some(e) if e.is_config() => 2,
        Some(e) if e.is_numerical() => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
