//! Minibatch Adam training of hedging policies and out-of-sample evaluation.
//!
//! A run samples one fixed training set, reshuffles it every epoch with a
//! seeded permutation, and takes one Adam step per minibatch (the last
//! minibatch of an epoch may be short). Everything is a deterministic
//! function of the configuration.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::accounting::{compute_pnl, CostSpec, PnlReport};
use crate::analytics::MarketParams;
use crate::error::{config, domain, Error, Result};
use crate::neuralnet::{
    adam_step, episode_gradient, episode_loss, policy_schedule, AdamConfig, AdamState, Checkpoint, InitDescriptor,
    NetParams, NetSpec, Objective,
};
use crate::simulator::{sample_scenarios, ScenarioDistribution, ScenarioSet, TimeGrid};
use crate::strategies::InstrumentPanel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub net: NetSpec,
    pub scenario_dist: ScenarioDistribution,
    pub grid: TimeGrid,
    pub panel: InstrumentPanel,
    pub market: MarketParams,
    pub costs: CostSpec,
    pub objective: Objective,
    pub sample_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.scenario_dist.validate()?;
        self.panel.validate()?;
        if self.epochs == 0 {
            return Err(config("epochs must be at least 1"));
        }
        if self.batch_size == 0 || self.sample_size == 0 {
            return Err(config("batch size and sample size must be positive"));
        }
        if self.net.output_dim != self.panel.instruments() {
            return Err(config(format!(
                "network has {} outputs but the panel has {} hedging instruments",
                self.net.output_dim,
                self.panel.instruments()
            )));
        }
        if self.grid.horizon >= self.panel.hedged.maturity {
            return Err(config("option maturity must exceed the trading horizon"));
        }
        self.costs.check(&self.panel, &self.market)?;
        let a = self.adam;
        if !(a.learning_rate > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.epsilon > 0.0) {
            return Err(config("invalid Adam hyperparameters"));
        }
        Ok(())
    }

    /// Number of Adam steps one run takes.
    pub fn total_steps(&self) -> usize {
        self.epochs * self.sample_size.div_ceil(self.batch_size)
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

/// Short SHA-256 of the JSON form of any serializable configuration.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("configurations serialize");
    hex::encode(&Sha256::digest(&bytes)[..8])
}

/// Seed of the parameter initialization, derived from the run seed.
fn init_seed(seed: u64) -> u64 {
    seed ^ 0x9E37_79B9_7F4A_7C15
}

fn shuffle_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0xD1B5_4A32_D192_ED03).wrapping_add(1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Average minibatch objective over the epoch.
    pub objective: f64,
    /// Mean |PnL| over every training path as seen during the epoch.
    pub mean_loss: f64,
    /// Largest |PnL| over the epoch.
    pub max_loss: f64,
    #[serde(skip)]
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedPolicy {
    pub config: TrainConfig,
    /// Objective of the initial parameters over the whole training set.
    pub initial_loss: f64,
    pub curve: Vec<EpochStats>,
    pub checkpoint: Checkpoint,
}

impl TrainedPolicy {
    pub fn spec(&self) -> &NetSpec {
        &self.config.net
    }

    pub fn params(&self) -> Result<NetParams> {
        self.checkpoint.net_params()
    }

    pub fn final_loss(&self) -> f64 {
        self.curve.last().map(|e| e.objective).unwrap_or(self.initial_loss)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let p: TrainedPolicy = serde_json::from_slice(&std::fs::read(path)?)?;
        p.config.validate()?;
        Ok(p)
    }

    /// Telemetry CSV: `epoch, objective, mean_loss, max_loss`.
    pub fn write_telemetry<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# config_hash={} seed={}", self.checkpoint.config_hash, self.config.seed)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "objective", "mean_loss", "max_loss"])?;
        for e in &self.curve {
            w.write_record([
                e.epoch.to_string(),
                e.objective.to_string(),
                e.mean_loss.to_string(),
                e.max_loss.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Wall-clock seconds per epoch; kept apart from the reproducible telemetry.
    pub fn write_timing<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "wall_seconds"])?;
        for e in &self.curve {
            w.write_record([e.epoch.to_string(), format!("{:.3}", e.wall_seconds)])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Objective over a whole scenario set, evaluated in minibatch-sized chunks.
fn full_set_objective(
    params: &NetParams,
    cfg: &TrainConfig,
    scenarios: &ScenarioSet,
) -> Result<f64> {
    let idx: Vec<usize> = (0..scenarios.len()).collect();
    let (mut sum, mut max) = (0.0, 0.0f64);
    for chunk in idx.chunks(cfg.batch_size.max(1024)) {
        let sub = scenarios.select(chunk);
        let (_, pnl) = episode_loss(params, &cfg.net, &sub, &cfg.panel, &cfg.market, &cfg.costs, Objective::MeanAbs)?;
        for p in pnl {
            sum += p.abs();
            max = max.max(p.abs());
        }
    }
    Ok(match cfg.objective {
        Objective::MeanAbs => sum / scenarios.len() as f64,
        Objective::BatchMax => max,
    })
}

pub fn train(cfg: &TrainConfig) -> Result<TrainedPolicy> {
    train_with_progress(cfg, |_| {})
}

/// Train, reporting each finished epoch to `on_epoch`.
pub fn train_with_progress(cfg: &TrainConfig, mut on_epoch: impl FnMut(&EpochStats)) -> Result<TrainedPolicy> {
    cfg.validate()?;
    let hash = cfg.hash();
    let scenarios = sample_scenarios(&cfg.scenario_dist, cfg.grid, cfg.sample_size, cfg.seed)?;
    let init = InitDescriptor::standard(init_seed(cfg.seed));
    let mut params = NetParams::init(&cfg.net, init.seed);
    let mut adam = AdamState::new(cfg.adam, params.len());
    let initial_loss = full_set_objective(&params, cfg, &scenarios)?;

    let mut rng = shuffle_rng(cfg.seed);
    let mut order: Vec<usize> = (0..scenarios.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let (mut obj_sum, mut abs_sum, mut max_abs, mut batches) = (0.0, 0.0, 0.0f64, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = scenarios.select(chunk);
            let diverged = |params: &NetParams, adam: &AdamState| Error::Diverged {
                epoch,
                batch: b,
                checkpoint: Box::new(Checkpoint::new(&cfg.net, params, adam, init.clone(), cfg.seed, &hash)),
            };
            let outcome = match episode_gradient(&params, &cfg.net, &batch, &cfg.panel, &cfg.market, &cfg.costs, cfg.objective) {
                Ok(o) => o,
                Err(Error::NonFinite { .. }) => return Err(diverged(&params, &adam)),
                Err(e) => return Err(e),
            };
            let before = (params.clone(), adam.clone());
            match adam_step(&mut params, &outcome.grad, &mut adam) {
                Ok(()) if params.is_finite() => {}
                Ok(()) | Err(Error::NonFinite { .. }) => return Err(diverged(&before.0, &before.1)),
                Err(e) => return Err(e),
            }
            obj_sum += outcome.loss;
            for p in &outcome.pnl {
                abs_sum += p.abs();
                max_abs = max_abs.max(p.abs());
            }
            batches += 1;
        }
        let stats = EpochStats {
            epoch: epoch + 1,
            objective: obj_sum / batches as f64,
            mean_loss: abs_sum / scenarios.len() as f64,
            max_loss: max_abs,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&stats);
        curve.push(stats);
    }

    Ok(TrainedPolicy {
        config: cfg.clone(),
        initial_loss,
        curve,
        checkpoint: Checkpoint::new(&cfg.net, &params, &adam, init, cfg.seed, &hash),
    })
}

/// Run the policy over `scenarios` and account its PnL.
pub fn evaluate(policy: &TrainedPolicy, scenarios: &ScenarioSet) -> Result<PnlReport> {
    evaluate_params(&policy.params()?, &policy.config, scenarios)
}

pub(crate) fn evaluate_params(params: &NetParams, cfg: &TrainConfig, scenarios: &ScenarioSet) -> Result<PnlReport> {
    if scenarios.grid != cfg.grid {
        return Err(domain(format!(
            "evaluation grid {:?} differs from the training grid {:?}",
            scenarios.grid, cfg.grid
        )));
    }
    let schedule = policy_schedule(params, &cfg.net, scenarios)?;
    compute_pnl(&schedule, scenarios, &cfg.panel, &cfg.market, &cfg.costs)
}

/// A training configuration with the common market setup: r = 0, σ = 0.2,
/// K⁰ = 1, T = 1.4, horizon 1, and hedgers with strikes 0 (and 1.1 when M = 2).
pub fn desk_config(instruments: usize, recurrent: bool, objective: Objective, dist: ScenarioDistribution, steps: usize) -> Result<TrainConfig> {
    let strikes: &[f64] = match instruments {
        1 => &[0.0],
        2 => &[0.0, 1.1],
        _ => return Err(config("desk configurations use one or two hedging instruments")),
    };
    Ok(TrainConfig {
        net: if recurrent {
            NetSpec::recurrent(instruments)
        } else {
            NetSpec::feedforward(instruments)
        },
        scenario_dist: dist,
        grid: TimeGrid::new(1.0, steps)?,
        panel: InstrumentPanel::new(1.0, strikes, 1.4)?,
        market: MarketParams::new(0.0, 0.2)?,
        costs: CostSpec::zero(instruments),
        objective,
        sample_size: 100_000,
        epochs: 20,
        batch_size: 256,
        seed: 1,
        adam: AdamConfig::default(),
    })
}
