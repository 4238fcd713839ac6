//! Pseudo-spectral two-boundary SQG (nonlinear Eady) model.
//!
//! The prognostic variable is the potential-temperature perturbation θ on the
//! lower (z = 0) and upper (z = H) boundaries of a doubly periodic channel
//! with uniform stratification, f-plane rotation and a uniform background
//! shear `U(z) = U0 (z/H - 1/2)`. The interior potential vorticity vanishes,
//! so the streamfunction is recovered level by level in Fourier space from
//! the two boundary temperatures (`θ = ∂ψ/∂z` on both boundaries).
//!
//! Time stepping is classical RK4 on the advective tendency with the linear
//! damping (∇^(2p) hyperdiffusion plus a κ⁻² large-scale drag) applied
//! exactly through an integrating factor. Quadratic products are dealiased
//! with the 2/3 rule.

mod snapshot;
mod transform;

pub use snapshot::{read_snapshot, write_snapshot, Snapshot};
pub use transform::{PhysicalField, SpectralField, Transform};

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

/// Fraction of the resolved wavenumbers kept by the dealiasing rule.
pub const DEALIAS_FRACTION: f64 = 2.0 / 3.0;

/// Shells `lo..=hi` of the default grid between the energy-containing scales
/// and the hyperdiffusive range, where the slope is fitted.
pub const INERTIAL_SHELLS: (usize, usize) = (5, 15);

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub lx: f64,
    pub ly: f64,
    pub h: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { nx: 64, ny: 64, nz: 2, lx: 2000.0, ly: 2000.0, h: 100.0 }
    }
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64, h: f64) -> Result<Self> {
        let grid = Self { nx, ny, nz: 2, lx, ly, h };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, n) in [("nx", self.nx), ("ny", self.ny)] {
            if n < 8 || !n.is_power_of_two() {
                return Err(Error::Config(format!("{name} = {n} must be a power of two >= 8")));
            }
        }
        if self.nz != 2 {
            return Err(Error::Config(format!("nz = {} but the model has exactly 2 boundary levels", self.nz)));
        }
        for (name, v) in [("lx", self.lx), ("ly", self.ly), ("h", self.h)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} = {v} must be positive")));
            }
        }
        Ok(())
    }

    pub fn nkx(&self) -> usize {
        self.nx / 2 + 1
    }

    pub fn points_per_level(&self) -> usize {
        self.nx * self.ny
    }

    /// Length of the flattened state vector, `nz * ny * nx`.
    pub fn state_dim(&self) -> usize {
        self.nz * self.ny * self.nx
    }

    pub fn spectral_len(&self) -> usize {
        self.nz * self.ny * self.nkx()
    }

    pub fn dx(&self) -> f64 {
        self.lx / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        self.ly / self.ny as f64
    }

    /// Signed wavenumber index of spectral row `j`.
    pub fn ky_index(&self, j: usize) -> i64 {
        if j <= self.ny / 2 {
            j as i64
        } else {
            j as i64 - self.ny as i64
        }
    }

    /// Whether mode `(j, i)` survives the 2/3 truncation.
    pub fn keeps(&self, j: usize, i: usize) -> bool {
        3 * i <= self.nx && 3 * self.ky_index(j).unsigned_abs() as usize <= self.ny
    }

    /// Spacing of the isotropic wavenumber shells.
    pub fn shell_width(&self) -> f64 {
        (2.0 * PI / self.lx).min(2.0 * PI / self.ly)
    }

    /// Largest wavenumber magnitude kept along the axes after dealiasing.
    pub fn cutoff_wavenumber(&self) -> f64 {
        (2.0 * PI / self.lx * (self.nx / 3) as f64).min(2.0 * PI / self.ly * (self.ny / 3) as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SqgParams {
    /// Coriolis parameter (1/h).
    pub f: f64,
    /// Buoyancy frequency (1/h).
    pub n_buoyancy: f64,
    /// Shear velocity difference between the two boundaries.
    pub u0: f64,
    /// Hyperdiffusion is ∇^(2p) with p = `hyper_order`.
    pub hyper_order: u32,
    /// E-folding time (h) of the dealiasing-cutoff wavenumber under hyperdiffusion.
    pub hyper_efold: f64,
    /// Linear drag rate (1/h) at the fundamental wavenumber, falling off as κ⁻².
    /// Zero disables it.
    pub large_scale_drag: f64,
    /// Model time step (h).
    pub dt: f64,
}

impl Default for SqgParams {
    fn default() -> Self {
        Self { f: 1.0, n_buoyancy: 1.0, u0: 5.0, hyper_order: 4, hyper_efold: 24.0, large_scale_drag: 0.1, dt: 0.25 }
    }
}

impl SqgParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in
            [("f", self.f), ("n_buoyancy", self.n_buoyancy), ("hyper_efold", self.hyper_efold), ("dt", self.dt)]
        {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} = {v} must be positive")));
            }
        }
        if self.hyper_order < 1 {
            return Err(Error::Config("hyper_order must be >= 1".into()));
        }
        // zero shear is admissible: unforced conservation checks need it
        if !(self.u0 >= 0.0 && self.u0.is_finite()) {
            return Err(Error::Config(format!("u0 = {} must be >= 0", self.u0)));
        }
        if !(self.large_scale_drag >= 0.0 && self.large_scale_drag.is_finite()) {
            return Err(Error::Config(format!("large_scale_drag = {} must be >= 0", self.large_scale_drag)));
        }
        Ok(())
    }
}

/// Isotropic shell-averaged kinetic energy, level-averaged.
#[derive(Debug, Clone, PartialEq)]
pub struct KeSpectrum {
    /// Shell centre wavenumber.
    pub kappa: Vec<f64>,
    /// Kinetic energy in the shell; the shells sum to the domain-mean ½(u² + v²).
    pub energy: Vec<f64>,
}

impl KeSpectrum {
    pub fn total(&self) -> f64 {
        self.energy.iter().sum()
    }

    /// Least-squares slope of log E against log κ over shells `lo..=hi`.
    pub fn slope(&self, lo: usize, hi: usize) -> Result<f64> {
        if hi >= self.energy.len() || lo == 0 || lo >= hi {
            return Err(Error::Config(format!("invalid shell range {lo}..={hi} for {} shells", self.energy.len())));
        }
        let pts: Vec<(f64, f64)> =
            (lo..=hi).filter(|&n| self.energy[n] > 0.0).map(|n| (self.kappa[n].ln(), self.energy[n].ln())).collect();
        if pts.len() < 2 {
            return Err(Error::ZeroField);
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        Ok(sxy / sxx)
    }

    /// Element-wise mean of several spectra of identical shape.
    pub fn mean(spectra: &[KeSpectrum]) -> Option<KeSpectrum> {
        let first = spectra.first()?;
        let mut energy = vec![0.0; first.energy.len()];
        for s in spectra {
            for (e, v) in energy.iter_mut().zip(&s.energy) {
                *e += v;
            }
        }
        let n = spectra.len() as f64;
        energy.iter_mut().for_each(|e| *e /= n);
        Some(KeSpectrum { kappa: first.kappa.clone(), energy })
    }
}

/// The SQG model: grid, parameters and every per-mode factor precomputed.
#[derive(Debug, Clone)]
pub struct SqgModel {
    grid: GridSpec,
    params: SqgParams,
    transform: Transform,
    kx: Vec<f64>,
    ky: Vec<f64>,
    kappa: Vec<f64>,
    mask: Vec<bool>,
    /// coth(μ)/m per mode.
    inv_same: Vec<f64>,
    /// csch(μ)/m per mode.
    inv_cross: Vec<f64>,
    /// Linear damping rate per mode.
    damping: Vec<f64>,
    /// exp(-damping * dt / 2).
    half_decay: Vec<f64>,
}

impl SqgModel {
    pub fn new(grid: GridSpec, params: SqgParams) -> Result<Self> {
        grid.validate()?;
        params.validate()?;
        let transform = Transform::new(&grid)?;
        let nkx = grid.nkx();
        let kx: Vec<f64> = (0..nkx).map(|i| 2.0 * PI / grid.lx * i as f64).collect();
        let ky: Vec<f64> = (0..grid.ny).map(|j| 2.0 * PI / grid.ly * grid.ky_index(j) as f64).collect();

        let n_modes = grid.ny * nkx;
        let mut kappa = Vec::with_capacity(n_modes);
        let mut mask = Vec::with_capacity(n_modes);
        for (j, &kyj) in ky.iter().enumerate() {
            for (i, &kxi) in kx.iter().enumerate() {
                kappa.push(kxi.hypot(kyj));
                mask.push(grid.keeps(j, i));
            }
        }

        let stratification = params.n_buoyancy / params.f;
        let mut inv_same = vec![0.0; n_modes];
        let mut inv_cross = vec![0.0; n_modes];
        for (idx, &k) in kappa.iter().enumerate() {
            if k == 0.0 {
                continue;
            }
            let m = stratification * k;
            let mu = m * grid.h;
            // coth and csch through e^{-2μ} so large μ cannot overflow.
            let q = (-2.0 * mu).exp();
            inv_same[idx] = (1.0 + q) / (1.0 - q) / m;
            inv_cross[idx] = 2.0 * (-mu).exp() / (1.0 - q) / m;
        }

        let p = params.hyper_order as i32;
        let nu = 1.0 / (params.hyper_efold * grid.cutoff_wavenumber().powi(2 * p));
        let k1 = grid.shell_width();
        let damping: Vec<f64> = kappa
            .iter()
            .map(|&k| if k == 0.0 { 0.0 } else { nu * k.powi(2 * p) + params.large_scale_drag * (k1 / k).powi(2) })
            .collect();
        let half_decay = damping.iter().map(|l| (-l * params.dt * 0.5).exp()).collect();

        Ok(Self { grid, params, transform, kx, ky, kappa, mask, inv_same, inv_cross, damping, half_decay })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn params(&self) -> &SqgParams {
        &self.params
    }

    pub fn transform(&self) -> &Transform {
        &self.transform
    }

    /// Wavenumber magnitude of every mode in one level, r2c order.
    pub fn kappa(&self) -> &[f64] {
        &self.kappa
    }

    /// Linear damping rate of every mode in one level.
    pub fn damping_rates(&self) -> &[f64] {
        &self.damping
    }

    pub fn forward_transform(&self, field: &PhysicalField) -> Result<SpectralField> {
        self.transform.forward(field)
    }

    pub fn inverse_transform(&self, spec: &SpectralField) -> Result<PhysicalField> {
        self.transform.inverse(spec)
    }

    pub fn dealias(&self, spec: &SpectralField) -> SpectralField {
        let mut out = spec.clone();
        self.dealias_in_place(&mut out);
        out
    }

    fn dealias_in_place(&self, spec: &mut SpectralField) {
        let n = self.mask.len();
        for level in spec.coeffs.chunks_mut(n) {
            for (c, &keep) in level.iter_mut().zip(&self.mask) {
                if !keep {
                    *c = ZERO;
                }
            }
        }
    }

    /// Streamfunction on both boundaries from the boundary temperatures.
    pub fn invert_theta(&self, theta: &SpectralField) -> SpectralField {
        let mut psi = SpectralField::zeros(&self.grid);
        let (t0, t1) = (theta.level(0), theta.level(1));
        let n = self.mask.len();
        for idx in 0..n {
            let (a, b) = (self.inv_same[idx], self.inv_cross[idx]);
            psi.coeffs[idx] = t1[idx] * b - t0[idx] * a;
            psi.coeffs[n + idx] = t1[idx] * a - t0[idx] * b;
        }
        psi
    }

    /// Spectral `∂/∂x` (`axis = 0`) or `∂/∂y` (`axis = 1`); Nyquist modes are dropped.
    fn derivative(&self, spec: &SpectralField, axis: usize) -> SpectralField {
        let nkx = self.grid.nkx();
        let mut out = spec.clone();
        for level in out.coeffs.chunks_mut(self.mask.len()) {
            for j in 0..self.grid.ny {
                for i in 0..nkx {
                    let nyquist = i == self.grid.nx / 2 || j == self.grid.ny / 2;
                    let k = if axis == 0 { self.kx[i] } else { self.ky[j] };
                    let c = &mut level[j * nkx + i];
                    *c = if nyquist { ZERO } else { *c * Complex64::new(0.0, k) };
                }
            }
        }
        out
    }

    /// Geostrophic velocities `u = -∂ψ/∂y`, `v = ∂ψ/∂x` on the grid.
    pub fn velocities(&self, psi: &SpectralField) -> Result<(PhysicalField, PhysicalField)> {
        let mut u = self.inverse_transform(&self.derivative(psi, 1))?;
        u.data.iter_mut().for_each(|x| *x = -*x);
        let v = self.inverse_transform(&self.derivative(psi, 0))?;
        Ok((u, v))
    }

    /// Background zonal wind on each level.
    pub fn background_wind(&self) -> [f64; 2] {
        [-0.5 * self.params.u0, 0.5 * self.params.u0]
    }

    /// Background meridional temperature gradient from thermal wind balance.
    pub fn background_gradient(&self) -> f64 {
        -self.params.u0 / self.grid.h
    }

    /// Advective tendency `-[(u + U) θx + v θy + v Θ̄y]`, dealiased. Damping is
    /// not included; it enters through the integrating factor.
    pub fn tendency(&self, theta: &SpectralField) -> Result<SpectralField> {
        let psi = self.invert_theta(theta);
        let (u, v) = self.velocities(&psi)?;
        let tx = self.inverse_transform(&self.derivative(theta, 0))?;
        let ty = self.inverse_transform(&self.derivative(theta, 1))?;
        let wind = self.background_wind();
        let grad = self.background_gradient();
        let mut adv = PhysicalField::zeros(&self.grid);
        for (z, &wz) in wind.iter().enumerate() {
            let (uz, vz, txz, tyz) = (u.level(z), v.level(z), tx.level(z), ty.level(z));
            for (p, a) in adv.level_mut(z).iter_mut().enumerate() {
                *a = -((uz[p] + wz) * txz[p] + vz[p] * tyz[p] + vz[p] * grad);
            }
        }
        let mut out = self.forward_transform(&adv)?;
        self.dealias_in_place(&mut out);
        Ok(out)
    }

    /// One integrating-factor RK4 step from model time `time`.
    pub fn step_rk4(&self, theta: &SpectralField, time: f64) -> Result<SpectralField> {
        let out = lawson_rk4(theta, self.params.dt, &self.half_decay, |s| self.tendency(s))?;
        let mut out = out;
        self.dealias_in_place(&mut out);
        if !out.is_finite() {
            return Err(Error::Blowup { time: time + self.params.dt });
        }
        Ok(out)
    }

    /// Advective CFL number `dt * max(|u + U|/dx + |v|/dy)`.
    pub fn cfl(&self, theta: &SpectralField) -> Result<f64> {
        let (u, v) = self.velocities(&self.invert_theta(theta))?;
        let wind = self.background_wind();
        let (dx, dy) = (self.grid.dx(), self.grid.dy());
        let mut worst: f64 = 0.0;
        for (z, &wz) in wind.iter().enumerate() {
            for (uu, vv) in u.level(z).iter().zip(v.level(z)) {
                worst = worst.max((uu + wz).abs() / dx + vv.abs() / dy);
            }
        }
        Ok(worst * self.params.dt)
    }

    /// Kinetic-energy spectrum of the flow induced by `theta`.
    pub fn ke_spectrum(&self, theta: &SpectralField) -> KeSpectrum {
        self.ke_spectrum_of_psi(&self.invert_theta(theta))
    }

    /// Kinetic-energy spectrum of a streamfunction, averaged over levels.
    pub fn ke_spectrum_of_psi(&self, psi: &SpectralField) -> KeSpectrum {
        let nkx = self.grid.nkx();
        let width = self.grid.shell_width();
        let n_shells = self.kappa.iter().map(|k| (k / width).round() as usize).max().unwrap_or(0) + 1;
        let mut energy = vec![0.0; n_shells];
        let norm = ((self.grid.nx * self.grid.ny) as f64).powi(2);
        let levels = self.grid.nz as f64;
        for level in psi.coeffs.chunks(self.mask.len()) {
            for j in 0..self.grid.ny {
                for i in 0..nkx {
                    let idx = j * nkx + i;
                    // modes with 0 < i < nx/2 stand for themselves and their conjugate
                    let mult = if i == 0 || i == self.grid.nx / 2 { 1.0 } else { 2.0 };
                    let k2 = self.kappa[idx] * self.kappa[idx];
                    let e = 0.5 * k2 * level[idx].norm_sqr() * mult / norm / levels;
                    energy[(self.kappa[idx] / width).round() as usize] += e;
                }
            }
        }
        let kappa = (0..n_shells).map(|n| n as f64 * width).collect();
        KeSpectrum { kappa, energy }
    }

    /// White-noise initial condition of standard deviation `amplitude`, dealiased.
    pub fn random_initial_condition(&self, amplitude: f64, seed: u64, index: u64) -> Result<SpectralField> {
        let mut rng = stream(seed, Purpose::InitialCondition, index, 0);
        let data = (0..self.grid.state_dim()).map(|_| amplitude * rng.sample::<f64, _>(StandardNormal)).collect();
        let field = PhysicalField::from_vec(&self.grid, data)?;
        let mut spec = self.forward_transform(&field)?;
        self.dealias_in_place(&mut spec);
        Ok(spec)
    }
}

/// Lawson (integrating-factor) RK4 for `θ' = -Λθ + N(θ)` with diagonal Λ.
///
/// `half_decay[m] = exp(-Λ_m dt / 2)` is applied mode-wise on every level.
pub fn lawson_rk4<F>(theta: &SpectralField, dt: f64, half_decay: &[f64], tendency: F) -> Result<SpectralField>
where
    F: Fn(&SpectralField) -> Result<SpectralField>,
{
    let decay = |s: &SpectralField, times: i32| -> SpectralField {
        let mut out = s.clone();
        for level in out.coeffs.chunks_mut(half_decay.len()) {
            for (c, e) in level.iter_mut().zip(half_decay) {
                *c *= e.powi(times);
            }
        }
        out
    };
    let k1 = tendency(theta)?;
    let k2 = tendency(&decay(&theta.axpy(0.5 * dt, &k1), 1))?;
    let k3 = tendency(&decay(theta, 1).axpy(0.5 * dt, &k2))?;
    let k4 = tendency(&decay(theta, 2).axpy(dt, &decay(&k3, 1)))?;

    let mid = k2.axpy(1.0, &k3);
    let mut out = decay(theta, 2);
    let (a, b) = (decay(&k1, 2), decay(&mid, 1));
    for (((o, x1), x23), x4) in out.coeffs.iter_mut().zip(&a.coeffs).zip(&b.coeffs).zip(&k4.coeffs) {
        *o += (x1 + x23 * 2.0 + x4) * (dt / 6.0);
    }
    Ok(out)
}
