//! Real-to-complex 2-D transforms on each boundary level.
//!
//! Layout follows the usual r2c convention: a level of `ny x nx` reals maps to
//! `ny x (nx/2 + 1)` complex coefficients, row-major in `ky`. The forward
//! transform is unnormalised and the inverse divides by `nx * ny`.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::GridSpec;
use crate::error::{Error, Result};

/// Potential temperature (or any level-stacked scalar) on the grid, `[nz][ny][nx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalField {
    pub nz: usize,
    pub ny: usize,
    pub nx: usize,
    pub data: Vec<f64>,
}

impl PhysicalField {
    pub fn zeros(grid: &GridSpec) -> Self {
        Self { nz: grid.nz, ny: grid.ny, nx: grid.nx, data: vec![0.0; grid.state_dim()] }
    }

    pub fn from_vec(grid: &GridSpec, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.state_dim() {
            return Err(Error::Shape { expected: grid.state_dim(), got: data.len() });
        }
        Ok(Self { nz: grid.nz, ny: grid.ny, nx: grid.nx, data })
    }

    pub fn level(&self, z: usize) -> &[f64] {
        let n = self.nx * self.ny;
        &self.data[z * n..(z + 1) * n]
    }

    pub fn level_mut(&mut self, z: usize) -> &mut [f64] {
        let n = self.nx * self.ny;
        &mut self.data[z * n..(z + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Fourier coefficients in r2c layout, `[nz][ny][nx/2+1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    pub nz: usize,
    pub ny: usize,
    pub nkx: usize,
    pub coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn zeros(grid: &GridSpec) -> Self {
        Self { nz: grid.nz, ny: grid.ny, nkx: grid.nkx(), coeffs: vec![Complex64::new(0.0, 0.0); grid.spectral_len()] }
    }

    pub fn level(&self, z: usize) -> &[Complex64] {
        let n = self.nkx * self.ny;
        &self.coeffs[z * n..(z + 1) * n]
    }

    pub fn level_mut(&mut self, z: usize) -> &mut [Complex64] {
        let n = self.nkx * self.ny;
        &mut self.coeffs[z * n..(z + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// `self + a * other`
    pub fn axpy(&self, a: f64, other: &SpectralField) -> SpectralField {
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(x, y)| x + y * a).collect();
        self.with_coeffs(coeffs)
    }

    pub fn scale(&self, a: f64) -> SpectralField {
        self.with_coeffs(self.coeffs.iter().map(|c| c * a).collect())
    }

    pub(crate) fn with_coeffs(&self, coeffs: Vec<Complex64>) -> SpectralField {
        SpectralField { nz: self.nz, ny: self.ny, nkx: self.nkx, coeffs }
    }
}

/// FFT plans for one grid. Cheap to clone, safe to share between threads.
#[derive(Clone)]
pub struct Transform {
    nx: usize,
    ny: usize,
    nz: usize,
    x_fwd: Arc<dyn Fft<f64>>,
    x_inv: Arc<dyn Fft<f64>>,
    y_fwd: Arc<dyn Fft<f64>>,
    y_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Transform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Transform").field("nx", &self.nx).field("ny", &self.ny).field("nz", &self.nz).finish()
    }
}

impl Transform {
    pub fn new(grid: &GridSpec) -> Result<Self> {
        grid.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            nx: grid.nx,
            ny: grid.ny,
            nz: grid.nz,
            x_fwd: planner.plan_fft_forward(grid.nx),
            x_inv: planner.plan_fft_inverse(grid.nx),
            y_fwd: planner.plan_fft_forward(grid.ny),
            y_inv: planner.plan_fft_inverse(grid.ny),
        })
    }

    fn nkx(&self) -> usize {
        self.nx / 2 + 1
    }

    pub fn forward(&self, field: &PhysicalField) -> Result<SpectralField> {
        self.check_physical(field)?;
        let mut out = SpectralField {
            nz: self.nz,
            ny: self.ny,
            nkx: self.nkx(),
            coeffs: vec![Complex64::new(0.0, 0.0); self.nz * self.ny * self.nkx()],
        };
        for z in 0..self.nz {
            self.forward_level(field.level(z), out.level_mut(z));
        }
        Ok(out)
    }

    pub fn inverse(&self, spec: &SpectralField) -> Result<PhysicalField> {
        self.check_spectral(spec)?;
        let mut out =
            PhysicalField { nz: self.nz, ny: self.ny, nx: self.nx, data: vec![0.0; self.nz * self.ny * self.nx] };
        for z in 0..self.nz {
            self.inverse_level(spec.level(z), out.level_mut(z));
        }
        Ok(out)
    }

    /// Forward transform of a single `ny x nx` level.
    pub fn forward_level(&self, input: &[f64], out: &mut [Complex64]) {
        let (nx, ny, nkx) = (self.nx, self.ny, self.nkx());
        let mut row = vec![Complex64::new(0.0, 0.0); nx];
        for j in 0..ny {
            for (c, &v) in row.iter_mut().zip(&input[j * nx..(j + 1) * nx]) {
                *c = Complex64::new(v, 0.0);
            }
            self.x_fwd.process(&mut row);
            out[j * nkx..(j + 1) * nkx].copy_from_slice(&row[..nkx]);
        }
        let mut col = vec![Complex64::new(0.0, 0.0); ny];
        for i in 0..nkx {
            for j in 0..ny {
                col[j] = out[j * nkx + i];
            }
            self.y_fwd.process(&mut col);
            for j in 0..ny {
                out[j * nkx + i] = col[j];
            }
        }
    }

    /// Inverse transform of a single level; the result is the real part of the
    /// Hermitian extension, normalised by `nx * ny`.
    pub fn inverse_level(&self, input: &[Complex64], out: &mut [f64]) {
        let (nx, ny, nkx) = (self.nx, self.ny, self.nkx());
        let mut work = input.to_vec();
        let mut col = vec![Complex64::new(0.0, 0.0); ny];
        for i in 0..nkx {
            for j in 0..ny {
                col[j] = work[j * nkx + i];
            }
            self.y_inv.process(&mut col);
            for j in 0..ny {
                work[j * nkx + i] = col[j];
            }
        }
        let norm = 1.0 / (nx * ny) as f64;
        let mut row = vec![Complex64::new(0.0, 0.0); nx];
        for j in 0..ny {
            let half = &work[j * nkx..(j + 1) * nkx];
            row[0] = Complex64::new(half[0].re, 0.0);
            for i in 1..nx / 2 {
                row[i] = half[i];
                row[nx - i] = half[i].conj();
            }
            row[nx / 2] = Complex64::new(half[nx / 2].re, 0.0);
            self.x_inv.process(&mut row);
            for (o, c) in out[j * nx..(j + 1) * nx].iter_mut().zip(&row) {
                *o = c.re * norm;
            }
        }
    }

    fn check_physical(&self, field: &PhysicalField) -> Result<()> {
        if field.nx != self.nx || field.ny != self.ny || field.nz != self.nz {
            return Err(Error::Config(format!(
                "field shape [{}][{}][{}] does not match grid [{}][{}][{}]",
                field.nz, field.ny, field.nx, self.nz, self.ny, self.nx
            )));
        }
        if field.data.len() != self.nz * self.ny * self.nx {
            return Err(Error::Shape { expected: self.nz * self.ny * self.nx, got: field.data.len() });
        }
        Ok(())
    }

    fn check_spectral(&self, spec: &SpectralField) -> Result<()> {
        if spec.nkx != self.nkx() || spec.ny != self.ny || spec.nz != self.nz {
            return Err(Error::Config(format!(
                "spectral shape [{}][{}][{}] does not match grid [{}][{}][{}]",
                spec.nz,
                spec.ny,
                spec.nkx,
                self.nz,
                self.ny,
                self.nkx()
            )));
        }
        if spec.coeffs.len() != self.nz * self.ny * self.nkx() {
            return Err(Error::Shape { expected: self.nz * self.ny * self.nkx(), got: spec.coeffs.len() });
        }
        Ok(())
    }
}
