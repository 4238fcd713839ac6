//! Observations of the flattened SQG state and their synthesis from truth.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};
use crate::sqg::GridSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "args", rename_all = "snake_case")]
pub enum ObsOperator {
    Identity,
    /// Observe the listed state indices in order.
    Select(Vec<usize>),
    /// Placeholder for nonlinear operators; every filter rejects it.
    Nonlinear(String),
}

impl ObsOperator {
    /// State indices observed, in observation order.
    pub fn indices(&self, state_dim: usize) -> Result<Vec<usize>> {
        match self {
            ObsOperator::Identity => Ok((0..state_dim).collect()),
            ObsOperator::Select(idx) => {
                if let Some(&bad) = idx.iter().find(|&&i| i >= state_dim) {
                    return Err(Error::Config(format!("observed index {bad} outside state of size {state_dim}")));
                }
                Ok(idx.clone())
            }
            ObsOperator::Nonlinear(name) => Err(Error::UnsupportedOperator(name.clone())),
        }
    }

    pub fn apply(&self, state: &[f64]) -> Result<Vec<f64>> {
        Ok(self.indices(state.len())?.into_iter().map(|i| state[i]).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub y: Vec<f64>,
    /// Horizontal `(x, y)` position of each scalar observation.
    pub locations: Vec<(f64, f64)>,
    pub operator: ObsOperator,
    /// Diagonal of R.
    pub r_diag: Vec<f64>,
    /// Model hours.
    pub time: f64,
}

impl Observation {
    pub fn new(
        y: Vec<f64>,
        locations: Vec<(f64, f64)>,
        operator: ObsOperator,
        r_diag: Vec<f64>,
        time: f64,
    ) -> Result<Self> {
        for len in [locations.len(), r_diag.len()] {
            if len != y.len() {
                return Err(Error::Shape { expected: y.len(), got: len });
            }
        }
        if let Some(r) = r_diag.iter().find(|r| !(**r > 0.0)) {
            return Err(Error::Config(format!("observation error variance {r} must be positive")));
        }
        Ok(Self { y, locations, operator, r_diag, time })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Observed state indices, checked against `state_dim` and `y`.
    pub fn indices(&self, state_dim: usize) -> Result<Vec<usize>> {
        let idx = self.operator.indices(state_dim)?;
        if idx.len() != self.y.len() {
            return Err(Error::Shape { expected: idx.len(), got: self.y.len() });
        }
        Ok(idx)
    }
}

/// Horizontal position of flattened state index `k` (layout `[z][y][x]`).
pub fn state_location(grid: &GridSpec, k: usize) -> (f64, f64) {
    let i = k % grid.nx;
    let j = (k / grid.nx) % grid.ny;
    (i as f64 * grid.dx(), j as f64 * grid.dy())
}

/// `y = H x + η` with `η ~ N(0, r_var I)`. `r_var = 0` gives `y = H x`
/// (the stored variance is then floored so that R stays invertible).
pub fn synthesize_observations(
    truth: &[f64],
    grid: &GridSpec,
    operator: ObsOperator,
    r_var: f64,
    seed: u64,
    cycle: u64,
    time: f64,
) -> Result<Observation> {
    if truth.len() != grid.state_dim() {
        return Err(Error::Shape { expected: grid.state_dim(), got: truth.len() });
    }
    if !(r_var >= 0.0) {
        return Err(Error::Config(format!("observation error variance {r_var} must be >= 0")));
    }
    let idx = operator.indices(truth.len())?;
    let mut rng = stream(seed, Purpose::Observation, cycle, 0);
    let sd = r_var.sqrt();
    let y = idx
        .iter()
        .map(|&i| {
            let eta: f64 = rng.sample(StandardNormal);
            truth[i] + sd * eta
        })
        .collect();
    let locations = idx.iter().map(|&i| state_location(grid, i)).collect();
    let r_diag = vec![r_var.max(f64::MIN_POSITIVE); idx.len()];
    Observation::new(y, locations, operator, r_diag, time)
}
