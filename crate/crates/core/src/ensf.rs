//! Ensemble score filter: a training-free diffusion-model analysis step.
//!
//! The forward process `Z_t = α_t Z_0 + β_t W` with `α_t = 1 − t`,
//! `β_t² = t` carries the forecast distribution to a standard Gaussian at
//! `t = 1`. The analysis draws fresh Gaussian particles and integrates the
//! reverse-time SDE back to `t = eps`, steering with a Monte Carlo estimate
//! of the prior score plus the damped likelihood score `(1 − t) Hᵀ R⁻¹ (y − Hz)`.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::{Ensemble, Workers};
use crate::observation::Observation;
use crate::rng::{stream, Purpose, Stream};

/// Coefficients of the linear forward SDE.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoiseSchedule;

impl NoiseSchedule {
    pub fn alpha(&self, t: f64) -> f64 {
        1.0 - t
    }

    pub fn beta2(&self, t: f64) -> f64 {
        t
    }

    /// `b(t) = d log α_t / dt`.
    pub fn drift(&self, t: f64) -> f64 {
        -1.0 / (1.0 - t)
    }

    /// `σ²(t) = dβ²/dt − 2 b(t) β²_t`.
    pub fn sigma2(&self, t: f64) -> f64 {
        1.0 + 2.0 * t / (1.0 - t)
    }

    /// Likelihood damping `h(t) = 1 − t`.
    pub fn damping(&self, t: f64) -> f64 {
        1.0 - t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsfConfig {
    pub n_steps: usize,
    /// Pseudo-time is kept inside `[eps, 1 − eps]`.
    pub eps: f64,
    /// Score mini-batch size; `None` uses every member.
    pub minibatch: Option<usize>,
    /// 0 keeps the sampled spread, 1 restores the forecast spread.
    pub relax_factor: f64,
    /// States are divided by this before sampling (R by its square).
    /// `None` samples in model units.
    pub state_scale: Option<f64>,
}

impl Default for EnsfConfig {
    fn default() -> Self {
        Self { n_steps: 100, eps: 0.01, minibatch: None, relax_factor: 1.0, state_scale: None }
    }
}

impl EnsfConfig {
    pub fn validate(&self, members: usize) -> Result<()> {
        if !(self.eps > 0.0 && self.eps < 0.5) {
            return Err(Error::Config(format!("eps = {} must lie in (0, 0.5)", self.eps)));
        }
        if self.n_steps < 10 {
            return Err(Error::Config(format!("n_steps = {} must be >= 10", self.n_steps)));
        }
        if let Some(j) = self.minibatch {
            if j == 0 || j > members {
                return Err(Error::Config(format!("minibatch {j} must lie in 1..={members}")));
            }
        }
        if !(0.0..=1.0).contains(&self.relax_factor) {
            return Err(Error::Config(format!("relax_factor = {} must lie in [0, 1]", self.relax_factor)));
        }
        if let Some(c) = self.state_scale {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Config(format!("state_scale = {c} must be positive")));
            }
        }
        Ok(())
    }

    /// Uniform grid `1 = t_0 > t_1 > … > t_n = eps`.
    pub fn time_grid(&self) -> Vec<f64> {
        let dt = (1.0 - self.eps) / self.n_steps as f64;
        (0..=self.n_steps).map(|k| if k == self.n_steps { self.eps } else { 1.0 - k as f64 * dt }).collect()
    }

    /// Pseudo-time at which coefficients and scores are evaluated for a
    /// grid node: `b` and `σ²` are singular at `t = 1`.
    pub fn eval_time(&self, t: f64) -> f64 {
        t.min(1.0 - self.eps)
    }
}

/// Monte Carlo prior score at `(z, t)` from forecast members `batch`.
///
/// Weights are a log-space softmax of `−‖z − α_t x_j‖² / (2β_t²)`.
pub fn prior_score(z: &[f64], t: f64, batch: &[&[f64]], eps: f64) -> Result<Vec<f64>> {
    if !(t >= eps && t <= 1.0) {
        return Err(Error::PseudoTimeDomain { t, eps });
    }
    if batch.is_empty() {
        return Err(Error::Config("prior score needs at least one member".into()));
    }
    let weights = score_weights(z, t, batch)?;
    let s = NoiseSchedule;
    let (alpha, beta2) = (s.alpha(t), s.beta2(t));
    let mut centre = vec![0.0; z.len()];
    for (x, w) in batch.iter().zip(&weights) {
        for (c, xi) in centre.iter_mut().zip(x.iter()) {
            *c += w * xi;
        }
    }
    Ok(z.iter().zip(&centre).map(|(zi, c)| -(zi - alpha * c) / beta2).collect())
}

/// Normalized member weights used by [`prior_score`].
pub fn score_weights(z: &[f64], t: f64, batch: &[&[f64]]) -> Result<Vec<f64>> {
    let s = NoiseSchedule;
    let (alpha, beta2) = (s.alpha(t), s.beta2(t));
    let mut logw = Vec::with_capacity(batch.len());
    for x in batch {
        if x.len() != z.len() {
            return Err(Error::Shape { expected: z.len(), got: x.len() });
        }
        let d2: f64 = z.iter().zip(x.iter()).map(|(zi, xi)| (zi - alpha * xi).powi(2)).sum();
        logw.push(-d2 / (2.0 * beta2));
    }
    let top = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = logw.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    Ok(w)
}

/// Linear observation in the form the likelihood score needs.
#[derive(Debug, Clone)]
struct LinearObs {
    idx: Vec<usize>,
    y: Vec<f64>,
    r_inv: Vec<f64>,
}

impl LinearObs {
    fn new(obs: &Observation, dim: usize) -> Result<Self> {
        Ok(Self { idx: obs.indices(dim)?, y: obs.y.clone(), r_inv: obs.r_diag.iter().map(|r| 1.0 / r).collect() })
    }

    fn add_score(&self, z: &[f64], weight: f64, out: &mut [f64]) {
        for ((&i, y), ri) in self.idx.iter().zip(&self.y).zip(&self.r_inv) {
            out[i] += weight * ri * (y - z[i]);
        }
    }
}

/// `Hᵀ R⁻¹ (y − H z)` for a linear operator.
pub fn likelihood_score(z: &[f64], obs: &Observation) -> Result<Vec<f64>> {
    let lin = LinearObs::new(obs, z.len())?;
    let mut out = vec![0.0; z.len()];
    lin.add_score(z, 1.0, &mut out);
    Ok(out)
}

/// Prior score plus the `h(t)`-damped likelihood score.
pub fn posterior_score(z: &[f64], t: f64, batch: &[&[f64]], obs: &Observation, eps: f64) -> Result<Vec<f64>> {
    let mut s = prior_score(z, t, batch, eps)?;
    LinearObs::new(obs, z.len())?.add_score(z, NoiseSchedule.damping(t), &mut s);
    Ok(s)
}

/// One backward Euler–Maruyama step with explicit coefficients:
/// `z ← z − (b z − σ² s) Δ + σ √Δ ξ`.
pub fn reverse_sde_step(z: &mut [f64], dt: f64, drift: f64, sigma2: f64, score: &[f64], noise: &[f64]) {
    let amp = (sigma2 * dt).sqrt();
    for ((zi, si), xi) in z.iter_mut().zip(score).zip(noise) {
        *zi = *zi - (drift * *zi - sigma2 * si) * dt + amp * xi;
    }
}

/// Integrate one particle from `t = 1` to `eps` from its own stream.
fn integrate_particle<F>(dim: usize, cfg: &EnsfConfig, rng: &mut Stream, mut score: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], f64, &mut Stream) -> Result<Vec<f64>>,
{
    let s = NoiseSchedule;
    let mut z: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let mut noise = vec![0.0; dim];
    let grid = cfg.time_grid();
    for pair in grid.windows(2) {
        let (t, dt) = (cfg.eval_time(pair[0]), pair[0] - pair[1]);
        let sc = score(&z, t, rng)?;
        noise.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        reverse_sde_step(&mut z, dt, s.drift(t), s.sigma2(t), &sc, &noise);
        if !z.iter().all(|v| v.is_finite()) {
            return Err(Error::SamplerDiverged { t: pair[1] });
        }
    }
    Ok(z)
}

/// Reverse-SDE sampler for an arbitrary score `score(z, t)`.
///
/// Particle `m` uses the stream keyed by `(seed, cycle, m)`.
pub fn sample_with_score<F>(
    n_particles: usize,
    dim: usize,
    cfg: &EnsfConfig,
    seed: u64,
    cycle: u64,
    workers: &Workers,
    score: F,
) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&[f64], f64) -> Result<Vec<f64>> + Sync,
{
    workers.install(|| {
        (0..n_particles)
            .into_par_iter()
            .map(|m| {
                let mut rng = stream(seed, Purpose::EnsfNoise, cycle, m as u64);
                integrate_particle(dim, cfg, &mut rng, |z, t, _| score(z, t))
            })
            .collect()
    })
}

/// Analysis ensemble from the forecast ensemble and one observation.
pub fn analyze(
    forecast: &Ensemble,
    obs: &Observation,
    cfg: &EnsfConfig,
    seed: u64,
    cycle: u64,
    workers: &Workers,
) -> Result<Ensemble> {
    let m = forecast.size();
    cfg.validate(m)?;
    if (forecast.valid_time - obs.time).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "forecast valid at {} h but observation at {} h",
            forecast.valid_time, obs.time
        )));
    }
    let dim = forecast.dim();
    let c = cfg.state_scale.unwrap_or(1.0);
    let mut lin = LinearObs::new(obs, dim)?;
    lin.y.iter_mut().for_each(|v| *v /= c);
    lin.r_inv.iter_mut().for_each(|v| *v *= c * c);
    let scaled: Vec<Vec<f64>> = forecast.members.iter().map(|x| x.iter().map(|v| v / c).collect()).collect();
    let members: Vec<&[f64]> = scaled.iter().map(Vec::as_slice).collect();
    let j = cfg.minibatch.unwrap_or(m);
    let sched = NoiseSchedule;

    let particles: Vec<Result<Vec<f64>>> = workers.install(|| {
        (0..m)
            .into_par_iter()
            .map(|p| {
                let mut rng = stream(seed, Purpose::EnsfNoise, cycle, p as u64);
                integrate_particle(dim, cfg, &mut rng, |z, t, rng| {
                    let mut s = if j == m {
                        prior_score(z, t, &members, cfg.eps)?
                    } else {
                        let batch: Vec<&[f64]> = sample(rng, m, j).into_iter().map(|i| members[i]).collect();
                        prior_score(z, t, &batch, cfg.eps)?
                    };
                    lin.add_score(z, sched.damping(t), &mut s);
                    Ok(s)
                })
            })
            .collect()
    });
    let mut particles = particles.into_iter().collect::<Result<Vec<_>>>()?;
    particles.iter_mut().flatten().for_each(|v| *v *= c);
    let analysis = forecast.with_members(particles)?;
    relax_spread(&analysis, forecast, cfg.relax_factor)
}

/// Rescale analysis deviations per variable by `(1 − f) + f σᵇ/σᵃ`.
pub fn relax_spread(analysis: &Ensemble, forecast: &Ensemble, factor: f64) -> Result<Ensemble> {
    if analysis.dim() != forecast.dim() {
        return Err(Error::Shape { expected: forecast.dim(), got: analysis.dim() });
    }
    if factor == 0.0 {
        return Ok(analysis.clone());
    }
    let mean = analysis.mean();
    let (sa, sb) = (analysis.std_dev(), forecast.std_dev());
    let scale: Vec<f64> = sa.iter().zip(&sb).map(|(a, b)| (1.0 - factor) + factor * b / a.max(1e-12)).collect();
    let members = analysis
        .members
        .iter()
        .map(|x| x.iter().zip(&mean).zip(&scale).map(|((xi, mu), c)| mu + c * (xi - mu)).collect())
        .collect();
    analysis.with_members(members)
}
