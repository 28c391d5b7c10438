//! Randomized geometric Brownian motion scenario sets.
//!
//! Every path draws its own drift, volatility and starting level, then
//! evolves on a uniform grid with the exact log scheme
//! `S_{i+1} = S_i exp((μ − σ²/2)δt + σ√δt Z_i)`.
//!
//! Each path has its own ChaCha stream selected by its path id, so a set is
//! reproducible regardless of how generation is split or ordered.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Error, Result};

/// A scalar parameter law: a point mass or a uniform interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "law")]
pub enum Law {
    Fixed { value: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl Law {
    pub fn fixed(value: f64) -> Self {
        Law::Fixed { value }
    }

    pub fn uniform(lo: f64, hi: f64) -> Self {
        Law::Uniform { lo, hi }
    }

    pub fn lower(&self) -> f64 {
        match *self {
            Law::Fixed { value } => value,
            Law::Uniform { lo, .. } => lo,
        }
    }

    pub fn upper(&self) -> f64 {
        match *self {
            Law::Fixed { value } => value,
            Law::Uniform { hi, .. } => hi,
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        let (lo, hi) = (self.lower(), self.upper());
        if !lo.is_finite() || !hi.is_finite() {
            return Err(config(format!("{name} law has non-finite bounds")));
        }
        if lo > hi {
            return Err(config(format!("{name} law bounds are not ordered: [{lo}, {hi}]")));
        }
        Ok(())
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            Law::Fixed { value } => value,
            Law::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
        }
    }
}

/// Joint law of the per-path model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioDistribution {
    pub drift: Law,
    pub vol: Law,
    pub spot: Law,
}

impl ScenarioDistribution {
    pub fn validate(&self) -> Result<()> {
        self.drift.validate("drift")?;
        self.vol.validate("volatility")?;
        self.spot.validate("spot")?;
        if self.vol.lower() < 0.0 {
            return Err(config("volatility law must not go below zero"));
        }
        if self.spot.lower() < 0.0 {
            return Err(config("spot law must not go below zero"));
        }
        Ok(())
    }
}

/// Known dynamics: the realized volatility and drift are fixed.
pub fn fixed_model(sigma: f64, mu: f64, spot: Law) -> Result<ScenarioDistribution> {
    if !(sigma >= 0.0) {
        return Err(domain(format!("volatility must be non-negative, got {sigma}")));
    }
    let dist = ScenarioDistribution {
        drift: Law::fixed(mu),
        vol: Law::fixed(sigma),
        spot,
    };
    dist.validate()?;
    Ok(dist)
}

/// Model uncertainty: σ ~ U(0, 0.3), μ ~ U(−0.05, 0.1), S₀ ~ U(0, 2).
pub fn uncertain_model() -> ScenarioDistribution {
    ScenarioDistribution {
        drift: Law::uniform(-0.05, 0.1),
        vol: Law::uniform(0.0, 0.3),
        spot: Law::uniform(0.0, 2.0),
    }
}

/// Uniform trading grid `{0, δt, …, nδt}` with `nδt = T′`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub horizon: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(config("time grid needs at least one step"));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(config(format!("horizon must be positive, got {horizon}")));
        }
        Ok(Self { horizon, steps })
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// Time of grid point `i`; exact at both ends.
    pub fn time(&self, i: usize) -> f64 {
        if i == self.steps {
            self.horizon
        } else {
            self.horizon * i as f64 / self.steps as f64
        }
    }

    pub fn points(&self) -> usize {
        self.steps + 1
    }
}

/// Realized parameters of one path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathParams {
    pub drift: f64,
    pub vol: f64,
    pub spot: f64,
}

/// Immutable batch of simulated price paths.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet {
    pub grid: TimeGrid,
    pub seed: u64,
    ids: Vec<u64>,
    params: Vec<PathParams>,
    /// Row-major, `grid.points()` prices per path.
    prices: Vec<f64>,
}

impl ScenarioSet {
    /// Assemble a set from explicit paths. Each row must have `grid.points()` prices.
    pub fn from_paths(grid: TimeGrid, seed: u64, params: Vec<PathParams>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if params.len() != rows.len() {
            return Err(Error::Shape(format!(
                "{} parameter rows for {} paths",
                params.len(),
                rows.len()
            )));
        }
        let mut prices = Vec::with_capacity(rows.len() * grid.points());
        for (k, row) in rows.iter().enumerate() {
            if row.len() != grid.points() {
                return Err(Error::Shape(format!(
                    "path {k} has {} prices, grid needs {}",
                    row.len(),
                    grid.points()
                )));
            }
            if row.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
                return Err(domain(format!("path {k} has a negative or non-finite price")));
            }
            prices.extend_from_slice(row);
        }
        Ok(Self {
            grid,
            seed,
            ids: (0..rows.len() as u64).collect(),
            params,
            prices,
        })
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn path(&self, k: usize) -> &[f64] {
        let w = self.grid.points();
        &self.prices[k * w..(k + 1) * w]
    }

    pub fn paths(&self) -> impl Iterator<Item = &[f64]> {
        self.prices.chunks_exact(self.grid.points())
    }

    pub fn params(&self) -> &[PathParams] {
        &self.params
    }

    pub fn path_id(&self, k: usize) -> u64 {
        self.ids[k]
    }

    /// Copy of the listed paths, keeping their ids.
    pub fn select(&self, indices: &[usize]) -> ScenarioSet {
        let w = self.grid.points();
        let mut prices = Vec::with_capacity(indices.len() * w);
        for &k in indices {
            prices.extend_from_slice(self.path(k));
        }
        ScenarioSet {
            grid: self.grid,
            seed: self.seed,
            ids: indices.iter().map(|&k| self.ids[k]).collect(),
            params: indices.iter().map(|&k| self.params[k]).collect(),
            prices,
        }
    }

    /// Concatenate sets sharing one grid.
    pub fn concat(parts: &[ScenarioSet]) -> Result<ScenarioSet> {
        let first = parts.first().ok_or_else(|| domain("nothing to concatenate"))?;
        let mut out = ScenarioSet {
            grid: first.grid,
            seed: first.seed,
            ids: Vec::new(),
            params: Vec::new(),
            prices: Vec::new(),
        };
        for p in parts {
            if p.grid != first.grid {
                return Err(Error::Shape("scenario grids differ".into()));
            }
            out.ids.extend_from_slice(&p.ids);
            out.params.extend_from_slice(&p.params);
            out.prices.extend_from_slice(&p.prices);
        }
        Ok(out)
    }

    /// CSV with one row per path: `path_id, drift, vol, s_0 … s_n`.
    ///
    /// The first line is a `#` comment carrying the grid, the generating seed and the given tag.
    pub fn write_csv<W: Write>(&self, mut out: W, tag: &str) -> Result<()> {
        writeln!(
            out,
            "# horizon={} steps={} scenario_seed={} {}",
            self.grid.horizon, self.grid.steps, self.seed, tag
        )?;
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["path_id".to_string(), "drift".into(), "vol".into()];
        header.extend((0..self.grid.points()).map(|i| format!("s{i}")));
        w.write_record(&header)?;
        for k in 0..self.len() {
            let p = &self.params[k];
            let mut rec = vec![self.ids[k].to_string(), p.drift.to_string(), p.vol.to_string()];
            rec.extend(self.path(k).iter().map(|s| s.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(mut input: R) -> Result<ScenarioSet> {
        let mut first = String::new();
        input.read_line(&mut first)?;
        let meta = first
            .strip_prefix('#')
            .ok_or_else(|| config("scenario CSV must start with a '#' metadata line"))?;
        let field = |key: &str| -> Result<&str> {
            meta.split_whitespace()
                .find_map(|kv| kv.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
                .ok_or_else(|| config(format!("scenario CSV metadata lacks `{key}`")))
        };
        let parse = |key: &str| -> Result<f64> {
            field(key)?
                .parse::<f64>()
                .map_err(|e| config(format!("bad `{key}` in scenario CSV: {e}")))
        };
        let horizon = parse("horizon")?;
        let steps = parse("steps")? as usize;
        let seed = field("scenario_seed")?
            .parse::<u64>()
            .map_err(|e| config(format!("bad seed in scenario CSV: {e}")))?;
        let grid = TimeGrid::new(horizon, steps)?;

        let mut reader = csv::Reader::from_reader(input);
        let mut ids = Vec::new();
        let mut params = Vec::new();
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            if rec.len() != 3 + grid.points() {
                return Err(Error::Shape(format!(
                    "scenario row has {} fields, expected {}",
                    rec.len(),
                    3 + grid.points()
                )));
            }
            let num = |i: usize| -> Result<f64> {
                rec[i]
                    .parse::<f64>()
                    .map_err(|e| config(format!("bad number `{}`: {e}", &rec[i])))
            };
            ids.push(
                rec[0]
                    .parse::<u64>()
                    .map_err(|e| config(format!("bad path id: {e}")))?,
            );
            let row: Vec<f64> = (3..rec.len()).map(num).collect::<Result<_>>()?;
            params.push(PathParams {
                drift: num(1)?,
                vol: num(2)?,
                spot: row[0],
            });
            rows.push(row);
        }
        let mut set = ScenarioSet::from_paths(grid, seed, params, rows)?;
        set.ids = ids;
        Ok(set)
    }
}

fn path_rng(seed: u64, path_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_id);
    rng
}

/// Generate `count` paths with ids `0..count`.
pub fn sample_scenarios(dist: &ScenarioDistribution, grid: TimeGrid, count: usize, seed: u64) -> Result<ScenarioSet> {
    sample_scenario_range(dist, grid, 0, count, seed)
}

/// Generate paths with ids `first..first + count`.
///
/// The result equals the corresponding rows of one large call, which lets
/// callers stream a big evaluation set in chunks.
pub fn sample_scenario_range(
    dist: &ScenarioDistribution,
    grid: TimeGrid,
    first: u64,
    count: usize,
    seed: u64,
) -> Result<ScenarioSet> {
    if count == 0 {
        return Err(domain("scenario count must be at least one"));
    }
    dist.validate()?;
    let w = grid.points();
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let mut params = Vec::with_capacity(count);
    let mut prices = vec![0.0; count * w];
    for (k, row) in prices.chunks_exact_mut(w).enumerate() {
        let mut rng = path_rng(seed, first + k as u64);
        let p = PathParams {
            drift: dist.drift.sample(&mut rng),
            vol: dist.vol.sample(&mut rng),
            spot: dist.spot.sample(&mut rng),
        };
        let mean = (p.drift - 0.5 * p.vol * p.vol) * dt;
        let scale = p.vol * sqrt_dt;
        row[0] = p.spot;
        for i in 0..grid.steps {
            let z: f64 = rng.sample(StandardNormal);
            row[i + 1] = row[i] * (mean + scale * z).exp();
        }
        params.push(p);
    }
    Ok(ScenarioSet {
        grid,
        seed,
        ids: (first..first + count as u64).collect(),
        params,
        prices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(s: f64) -> Law {
        Law::fixed(s)
    }

    #[test]
    fn flat_world_is_constant() {
        let dist = fixed_model(0.0, 0.0, point(1.0)).unwrap();
        let set = sample_scenarios(&dist, TimeGrid::new(1.0, 4).unwrap(), 3, 7).unwrap();
        for p in set.paths() {
            assert_eq!(p, &[1.0; 5]);
        }
    }

    #[test]
    fn zero_vol_path_is_deterministic_exponential() {
        let dist = fixed_model(0.0, 0.1, point(1.0)).unwrap();
        let set = sample_scenarios(&dist, TimeGrid::new(1.0, 2).unwrap(), 1, 0).unwrap();
        let p = set.path(0);
        assert_eq!(p[0], 1.0);
        assert!((p[1] / 0.05f64.exp() - 1.0).abs() < 1e-15);
        assert!((p[2] / 0.1f64.exp() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_vol_exact_over_long_grid() {
        let dist = fixed_model(0.0, 0.07, Law::uniform(0.5, 1.5)).unwrap();
        let grid = TimeGrid::new(1.0, 1000).unwrap();
        let set = sample_scenarios(&dist, grid, 5, 3).unwrap();
        for (k, p) in set.paths().enumerate() {
            let s0 = set.params()[k].spot;
            for (i, s) in p.iter().enumerate() {
                let exact = s0 * (0.07 * grid.time(i)).exp();
                assert!((s / exact - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_start_is_absorbing() {
        let dist = fixed_model(0.2, 0.05, point(0.0)).unwrap();
        let set = sample_scenarios(&dist, TimeGrid::new(1.0, 10).unwrap(), 4, 1).unwrap();
        assert!(set.paths().all(|p| p.iter().all(|&s| s == 0.0)));
    }

    #[test]
    fn same_seed_same_set_and_ranges_compose() {
        let dist = uncertain_model();
        let grid = TimeGrid::new(1.0, 16).unwrap();
        let a = sample_scenarios(&dist, grid, 40, 99).unwrap();
        let b = sample_scenarios(&dist, grid, 40, 99).unwrap();
        assert_eq!(a, b);
        let lo = sample_scenario_range(&dist, grid, 0, 15, 99).unwrap();
        let hi = sample_scenario_range(&dist, grid, 15, 25, 99).unwrap();
        assert_eq!(ScenarioSet::concat(&[lo, hi]).unwrap(), a);
        let c = sample_scenarios(&dist, grid, 40, 100).unwrap();
        assert_ne!(a.path(0), c.path(0));
    }

    #[test]
    fn uncertain_model_support() {
        let set = sample_scenarios(&uncertain_model(), TimeGrid::new(1.0, 1).unwrap(), 5000, 5).unwrap();
        for p in set.params() {
            assert!((-0.05..=0.1).contains(&p.drift));
            assert!((0.0..=0.3).contains(&p.vol));
            assert!((0.0..=2.0).contains(&p.spot));
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let dist = fixed_model(0.2, 0.0, point(1.0)).unwrap();
        let grid = TimeGrid::new(1.0, 4).unwrap();
        assert!(sample_scenarios(&dist, grid, 0, 1).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
        assert!(fixed_model(-0.1, 0.0, point(1.0)).is_err());
        assert!(fixed_model(0.2, 0.0, Law::uniform(2.0, 0.0)).is_err());
        let bad = ScenarioDistribution {
            vol: Law::uniform(-0.1, 0.2),
            ..uncertain_model()
        };
        assert!(sample_scenarios(&bad, grid, 1, 1).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let set = sample_scenarios(&uncertain_model(), TimeGrid::new(1.0, 5).unwrap(), 7, 11).unwrap();
        let sub = set.select(&[6, 2, 3]);
        let mut buf = Vec::new();
        sub.write_csv(&mut buf, "config_hash=abc").unwrap();
        let back = ScenarioSet::read_csv(&buf[..]).unwrap();
        assert_eq!(back, sub);
    }

    #[test]
    fn grid_endpoints_exact() {
        let g = TimeGrid::new(1.0, 3).unwrap();
        assert_eq!(g.time(0), 0.0);
        assert_eq!(g.time(3), 1.0);
        assert_eq!(g.points(), 4);
    }
}
