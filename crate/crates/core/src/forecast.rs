//! Forecast-model handle, parallel ensemble propagation and stochastic
//! model-error injection.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};
use crate::sqg::{PhysicalField, SqgModel};

/// Any discrete-time model that advances a flattened state vector.
pub trait ForecastModel: Send + Sync {
    fn name(&self) -> &str;
    /// Step length in model hours.
    fn dt(&self) -> f64;
    fn state_dim(&self) -> usize;
    /// Apply `n_steps` steps starting at model time `start`.
    fn integrate(&self, state: &[f64], start: f64, n_steps: usize) -> Result<Vec<f64>>;
}

impl ForecastModel for SqgModel {
    fn name(&self) -> &str {
        "sqg"
    }

    fn dt(&self) -> f64 {
        self.params().dt
    }

    fn state_dim(&self) -> usize {
        self.grid().state_dim()
    }

    fn integrate(&self, state: &[f64], start: f64, n_steps: usize) -> Result<Vec<f64>> {
        if n_steps == 0 {
            return Ok(state.to_vec());
        }
        let field = PhysicalField::from_vec(self.grid(), state.to_vec())?;
        let mut spec = self.forward_transform(&field)?;
        for k in 0..n_steps {
            spec = self.step_rk4(&spec, start + k as f64 * self.params().dt)?;
        }
        Ok(self.inverse_transform(&spec)?.data)
    }
}

/// Number of model steps in `duration`, which must be a whole multiple of `dt`.
pub fn steps_for(duration: f64, dt: f64) -> Result<usize> {
    let n = duration / dt;
    if !(duration >= 0.0) || (n - n.round()).abs() > 1e-9 * n.max(1.0) {
        return Err(Error::Config(format!("duration {duration} h is not a non-negative multiple of dt = {dt}")));
    }
    Ok(n.round() as usize)
}

/// Advance one state by `duration` model hours.
pub fn advance(model: &dyn ForecastModel, state: &[f64], start: f64, duration: f64) -> Result<Vec<f64>> {
    if state.len() != model.state_dim() {
        return Err(Error::Shape { expected: model.state_dim(), got: state.len() });
    }
    model.integrate(state, start, steps_for(duration, model.dt())?)
}

/// Fixed-size worker pool. Results never depend on its size.
#[derive(Clone)]
pub struct Workers {
    pool: Arc<rayon::ThreadPool>,
    count: usize,
}

impl Workers {
    pub fn new(count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(count)
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
        Ok(Self { pool: Arc::new(pool), count })
    }

    /// Pool sized from `TURBDA_WORKERS`, falling back to the logical core count.
    pub fn from_env() -> Result<Self> {
        let count = match std::env::var("TURBDA_WORKERS") {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("TURBDA_WORKERS = {v:?} is not a positive integer")))?,
            Err(_) => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        };
        Self::new(count)
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn install<R: Send>(&self, op: impl FnOnce() -> R + Send) -> R {
        self.pool.install(op)
    }
}

impl std::fmt::Debug for Workers {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Workers").field("count", &self.count).finish()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub members: Vec<Vec<f64>>,
    pub member_seeds: Vec<u64>,
    /// Model hours.
    pub valid_time: f64,
}

impl Ensemble {
    pub fn new(members: Vec<Vec<f64>>, member_seeds: Vec<u64>, valid_time: f64) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Config("ensemble needs at least one member".into()));
        }
        if member_seeds.len() != members.len() {
            return Err(Error::Shape { expected: members.len(), got: member_seeds.len() });
        }
        let d = members[0].len();
        if let Some(bad) = members.iter().find(|m| m.len() != d) {
            return Err(Error::Shape { expected: d, got: bad.len() });
        }
        Ok(Self { members, member_seeds, valid_time })
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn dim(&self) -> usize {
        self.members[0].len()
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim()];
        for m in &self.members {
            for (a, x) in mean.iter_mut().zip(m) {
                *a += x;
            }
        }
        let n = self.size() as f64;
        mean.iter_mut().for_each(|a| *a /= n);
        mean
    }

    /// Per-variable standard deviation with M − 1 normalization.
    pub fn std_dev(&self) -> Vec<f64> {
        let mean = self.mean();
        let mut var = vec![0.0; self.dim()];
        for m in &self.members {
            for ((v, x), mu) in var.iter_mut().zip(m).zip(&mean) {
                *v += (x - mu).powi(2);
            }
        }
        let denom = (self.size().max(2) - 1) as f64;
        var.iter().map(|v| (v / denom).sqrt()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.members.iter().all(|m| m.iter().all(|v| v.is_finite()))
    }

    /// Same seeds and valid time, new member states.
    pub fn with_members(&self, members: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(members, self.member_seeds.clone(), self.valid_time)
    }
}

/// Advance every member by `duration`; fails with the lowest failing member index.
pub fn propagate_ensemble(
    model: &dyn ForecastModel,
    ens: &Ensemble,
    duration: f64,
    workers: &Workers,
) -> Result<Ensemble> {
    let n_steps = steps_for(duration, model.dt())?;
    let start = ens.valid_time;
    let results: Vec<Result<Vec<f64>>> = workers.install(|| {
        ens.members
            .par_iter()
            .map(|m| {
                if m.len() != model.state_dim() {
                    return Err(Error::Shape { expected: model.state_dim(), got: m.len() });
                }
                model.integrate(m, start, n_steps)
            })
            .collect()
    });
    let mut members = Vec::with_capacity(results.len());
    for (member, r) in results.into_iter().enumerate() {
        members.push(r.map_err(|e| Error::Member { member, source: Box::new(e) })?);
    }
    Ensemble::new(members, ens.member_seeds.clone(), start + duration)
}

/// Additive white model error drawn from a Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelErrorConfig {
    pub enabled: bool,
    /// `(probability, amplitude_fraction)` pairs; leftover probability means no error.
    pub mixture: Vec<(f64, f64)>,
    /// Scale the fractions multiply. `None` means "climatological RMS of the run".
    pub base_amplitude: Option<f64>,
}

impl Default for ModelErrorConfig {
    fn default() -> Self {
        Self { enabled: false, mixture: vec![(0.20, 0.2), (0.15, 0.3), (0.10, 0.4), (0.05, 0.5)], base_amplitude: None }
    }
}

impl ModelErrorConfig {
    pub fn validate(&self) -> Result<()> {
        let mut total = 0.0;
        for &(p, frac) in &self.mixture {
            if !(p >= 0.0) || !(frac > 0.0) {
                return Err(Error::Config(format!("mixture entry ({p}, {frac}) needs p >= 0 and fraction > 0")));
            }
            total += p;
        }
        if total > 1.0 + 1e-12 {
            return Err(Error::Config(format!("mixture probabilities sum to {total} > 1")));
        }
        if let Some(a) = self.base_amplitude {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(Error::Config(format!("base_amplitude = {a} must be >= 0")));
            }
        }
        Ok(())
    }

    /// Probability that a given point receives an error.
    pub fn perturbed_fraction(&self) -> f64 {
        self.mixture.iter().map(|m| m.0).sum()
    }
}

/// Perturb every member pointwise from its own `(member seed, cycle)` stream.
pub fn inject_model_error(ens: &Ensemble, cfg: &ModelErrorConfig, base_amplitude: f64, cycle: u64) -> Result<Ensemble> {
    if !cfg.enabled {
        return Ok(ens.clone());
    }
    cfg.validate()?;
    let members = ens
        .members
        .iter()
        .zip(&ens.member_seeds)
        .map(|(m, &seed)| {
            let mut rng = stream(seed, Purpose::ModelError, cycle, 0);
            m.iter()
                .map(|&x| {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    for &(p, frac) in &cfg.mixture {
                        acc += p;
                        if u < acc {
                            let xi: f64 = rng.sample(StandardNormal);
                            return x + frac * base_amplitude * xi;
                        }
                    }
                    x
                })
                .collect()
        })
        .collect();
    ens.with_members(members)
}

/// Root-mean-square over all points of all snapshots.
pub fn climatological_amplitude(trajectory: &[Vec<f64>]) -> Result<f64> {
    let count: usize = trajectory.iter().map(Vec::len).sum();
    if count == 0 {
        return Err(Error::EmptyTrajectory);
    }
    let sum: f64 = trajectory.iter().flatten().map(|v| v * v).sum();
    Ok((sum / count as f64).sqrt())
}
