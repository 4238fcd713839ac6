//! Local ensemble transform Kalman filter with Gaspari–Cohn R-localization
//! and relaxation-to-prior-spread inflation.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::{Ensemble, Workers};
use crate::observation::Observation;
use crate::sqg::GridSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LetkfConfig {
    /// Localization cut-off in kilometres.
    pub cutoff_km: f64,
    /// Physical width of the domain in kilometres; maps `cutoff_km` to grid length.
    pub domain_km: f64,
    pub rtps_alpha: f64,
    /// Use every n-th observation only.
    pub obs_thinning: Option<usize>,
}

impl Default for LetkfConfig {
    fn default() -> Self {
        Self { cutoff_km: 2000.0, domain_km: 20_000.0, rtps_alpha: 0.3, obs_thinning: None }
    }
}

impl LetkfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cutoff_km > 0.0) || !(self.domain_km > 0.0 && self.domain_km.is_finite()) {
            return Err(Error::Config("cutoff_km and domain_km must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.rtps_alpha) {
            return Err(Error::Config(format!("rtps_alpha = {} must lie in [0, 1]", self.rtps_alpha)));
        }
        if self.obs_thinning == Some(0) {
            return Err(Error::Config("obs_thinning must be >= 1".into()));
        }
        Ok(())
    }

    /// Cut-off in model length units.
    pub fn cutoff(&self, grid: &GridSpec) -> f64 {
        self.cutoff_km / self.domain_km * grid.lx
    }
}

/// Gaspari–Cohn fifth-order compactly supported correlation at `r = d / c`.
pub fn gaspari_cohn(r: f64) -> Result<f64> {
    if !(r >= 0.0) {
        return Err(Error::Config(format!("Gaspari-Cohn distance {r} must be >= 0")));
    }
    let w = if r <= 1.0 {
        1.0 - 5.0 * r.powi(2) / 3.0 + 5.0 * r.powi(3) / 8.0 + r.powi(4) / 2.0 - r.powi(5) / 4.0
    } else if r < 2.0 {
        4.0 - 5.0 * r + 5.0 * r.powi(3) / 8.0 + 5.0 * r.powi(2) / 3.0 - r.powi(4) / 2.0 + r.powi(5) / 12.0
            - 2.0 / (3.0 * r)
    } else {
        0.0
    };
    Ok(w.clamp(0.0, 1.0))
}

/// Weights of one local ETKF solve.
#[derive(Debug, Clone)]
pub struct LocalTransform {
    /// Mean-update weights `w̄` (length M).
    pub mean: DVector<f64>,
    /// Symmetric perturbation transform `W` (M × M).
    pub transform: DMatrix<f64>,
}

/// Solve the ensemble-space analysis for background observation
/// perturbations `yb` (p × M), innovation `y − ȳᵇ` and localized `R⁻¹`.
///
/// Returns `None` for a non-finite eigen-decomposition; the caller names the point.
pub fn etkf_local_analysis(yb: &DMatrix<f64>, innovation: &DVector<f64>, r_inv: &[f64]) -> Option<LocalTransform> {
    let m = yb.ncols();
    let c = DMatrix::from_fn(m, yb.nrows(), |i, k| yb[(k, i)] * r_inv[k]);
    let mut a = &c * yb;
    for i in 0..m {
        a[(i, i)] += (m - 1) as f64;
    }
    // symmetrize against roundoff before decomposing
    let a = (&a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(a);
    if eig.eigenvalues.iter().any(|l| !l.is_finite() || *l <= 0.0) {
        return None;
    }
    let q = &eig.eigenvectors;
    let inv = DVector::from_iterator(m, eig.eigenvalues.iter().map(|l| 1.0 / l));
    let sqrt = DVector::from_iterator(m, eig.eigenvalues.iter().map(|l| ((m - 1) as f64 / l).sqrt()));
    let pa = q * DMatrix::from_diagonal(&inv) * q.transpose();
    let transform = q * DMatrix::from_diagonal(&sqrt) * q.transpose();
    let mean = pa * (c * innovation);
    if mean.iter().chain(transform.iter()).any(|v| !v.is_finite()) {
        return None;
    }
    Some(LocalTransform { mean, transform })
}

/// Minimum-image distance on the doubly periodic domain.
pub fn torus_distance(a: (f64, f64), b: (f64, f64), lx: f64, ly: f64) -> f64 {
    let wrap = |d: f64, l: f64| {
        let d = d.abs() % l;
        d.min(l - d)
    };
    wrap(a.0 - b.0, lx).hypot(wrap(a.1 - b.1, ly))
}

/// Localized analysis at every horizontal grid point, then RTPS.
pub fn letkf_analyze(
    forecast: &Ensemble,
    obs: &Observation,
    cfg: &LetkfConfig,
    grid: &GridSpec,
    workers: &Workers,
) -> Result<Ensemble> {
    cfg.validate()?;
    let m = forecast.size();
    if m < 2 {
        return Err(Error::Config("LETKF needs at least two members".into()));
    }
    if forecast.dim() != grid.state_dim() {
        return Err(Error::Shape { expected: grid.state_dim(), got: forecast.dim() });
    }
    if (forecast.valid_time - obs.time).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "forecast valid at {} h but observation at {} h",
            forecast.valid_time, obs.time
        )));
    }
    let idx = obs.indices(grid.state_dim())?;
    let stride = cfg.obs_thinning.unwrap_or(1);
    let used: Vec<usize> = (0..idx.len()).step_by(stride).collect();

    // observation-space background ensemble
    let p = used.len();
    let mut yb = DMatrix::zeros(p, m);
    for (k, &o) in used.iter().enumerate() {
        for (j, x) in forecast.members.iter().enumerate() {
            yb[(k, j)] = x[idx[o]];
        }
    }
    let yb_mean: Vec<f64> = (0..p).map(|k| yb.row(k).sum() / m as f64).collect();
    for k in 0..p {
        for j in 0..m {
            yb[(k, j)] -= yb_mean[k];
        }
    }
    let innovation: Vec<f64> = used.iter().enumerate().map(|(k, &o)| obs.y[o] - yb_mean[k]).collect();
    let r_inv: Vec<f64> = used.iter().map(|&o| 1.0 / obs.r_diag[o]).collect();
    let locs: Vec<(f64, f64)> = used.iter().map(|&o| obs.locations[o]).collect();

    let cutoff = cfg.cutoff(grid);
    let mean = forecast.mean();
    let npts = grid.points_per_level();

    let columns: Vec<Result<Vec<Vec<f64>>>> = workers.install(|| {
        (0..npts)
            .into_par_iter()
            .map(|pt| {
                let (i, j) = (pt % grid.nx, pt / grid.nx);
                let here = (i as f64 * grid.dx(), j as f64 * grid.dy());
                let mut local = Vec::new();
                let mut local_rinv = Vec::new();
                for (k, &loc) in locs.iter().enumerate() {
                    let d = torus_distance(here, loc, grid.lx, grid.ly);
                    if d < 2.0 * cutoff {
                        let w = gaspari_cohn(d / cutoff)?;
                        if w > 0.0 {
                            local.push(k);
                            local_rinv.push(w * r_inv[k]);
                        }
                    }
                }
                let levels: Vec<usize> = (0..grid.nz).map(|z| z * npts + pt).collect();
                if local.is_empty() {
                    return Ok(levels.iter().map(|&s| forecast.members.iter().map(|x| x[s]).collect()).collect());
                }
                let yl = DMatrix::from_fn(local.len(), m, |r, c| yb[(local[r], c)]);
                let dl = DVector::from_iterator(local.len(), local.iter().map(|&k| innovation[k]));
                let t = etkf_local_analysis(&yl, &dl, &local_rinv).ok_or(Error::SingularAnalysis { i, j })?;
                Ok(levels
                    .iter()
                    .map(|&s| {
                        let pert: Vec<f64> = forecast.members.iter().map(|x| x[s] - mean[s]).collect();
                        let shift: f64 = pert.iter().zip(t.mean.iter()).map(|(a, b)| a * b).sum();
                        (0..m)
                            .map(|c| mean[s] + shift + (0..m).map(|r| pert[r] * t.transform[(r, c)]).sum::<f64>())
                            .collect()
                    })
                    .collect())
            })
            .collect()
    });

    let mut members = vec![vec![0.0; grid.state_dim()]; m];
    for (pt, col) in columns.into_iter().enumerate() {
        for (z, values) in col?.into_iter().enumerate() {
            for (member, v) in members.iter_mut().zip(values) {
                member[z * npts + pt] = v;
            }
        }
    }
    let analysis = forecast.with_members(members)?;
    rtps_inflate(&analysis, forecast, cfg.rtps_alpha)
}

/// Scale analysis deviations per variable by `1 + α (σᵇ − σᵃ)/σᵃ`.
pub fn rtps_inflate(analysis: &Ensemble, background: &Ensemble, alpha: f64) -> Result<Ensemble> {
    if analysis.dim() != background.dim() {
        return Err(Error::Shape { expected: background.dim(), got: analysis.dim() });
    }
    if alpha == 0.0 {
        return Ok(analysis.clone());
    }
    let mean = analysis.mean();
    let (sa, sb) = (analysis.std_dev(), background.std_dev());
    let scale: Vec<f64> = sa
        .iter()
        .zip(&sb)
        .map(|(a, b)| {
            let a = a.max(1e-12);
            1.0 + alpha * (b - a) / a
        })
        .collect();
    let members = analysis
        .members
        .iter()
        .map(|x| x.iter().zip(&mean).zip(&scale).map(|((xi, mu), c)| mu + c * (xi - mu)).collect())
        .collect();
    analysis.with_members(members)
}
