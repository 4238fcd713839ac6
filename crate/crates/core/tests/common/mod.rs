//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use turbda::forecast::Ensemble;
use turbda::observation::Observation;

/// Principal square root by the Denman–Beavers iteration.
pub fn sqrtm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let (mut y, mut z) = (a.clone(), DMatrix::identity(n, n));
    for _ in 0..100 {
        let yi = y.clone().try_inverse().unwrap();
        let zi = z.clone().try_inverse().unwrap();
        let next = (&y + zi) * 0.5;
        z = (&z + yi) * 0.5;
        let done = (&next - &y).norm() < 1e-15 * next.norm();
        y = next;
        if done {
            break;
        }
    }
    y
}

/// Global ETKF written in state space: Kalman-gain mean update
/// and right-multiplied symmetric square-root perturbations.
pub fn global_etkf(ens: &Ensemble, obs: &Observation) -> Vec<Vec<f64>> {
    let (m, n) = (ens.size(), ens.dim());
    let idx = obs.indices(n).unwrap();
    let mean = DVector::from_vec(ens.mean());
    let x = DMatrix::from_fn(n, m, |i, j| ens.members[j][i] - mean[i]);
    let hx = DMatrix::from_fn(idx.len(), m, |k, j| x[(idx[k], j)]);
    let r = DMatrix::from_diagonal(&DVector::from_vec(obs.r_diag.clone()));
    let innov = DVector::from_iterator(idx.len(), idx.iter().zip(&obs.y).map(|(&k, y)| y - mean[k]));
    let s = &hx * hx.transpose() + &r * (m - 1) as f64;
    let gain = &x * hx.transpose() * s.try_inverse().unwrap();
    let xa_mean = &mean + gain * innov;
    let rinv = r.try_inverse().unwrap();
    let inner = DMatrix::identity(m, m) + hx.transpose() * rinv * &hx / (m - 1) as f64;
    let t = sqrtm(&inner).try_inverse().unwrap();
    let xa = &x * t;
    (0..m).map(|j| (0..n).map(|i| xa_mean[i] + xa[(i, j)]).collect()).collect()
}

/// Exact Kalman update of the Gaussian fitted to `ens`, identity observation
/// operator and diagonal `r`: posterior mean and covariance.
pub fn kalman_update(ens: &Ensemble, y: &[f64], r: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let (m, n) = (ens.size(), ens.dim());
    let mean = DVector::from_vec(ens.mean());
    let x = DMatrix::from_fn(n, m, |i, j| ens.members[j][i] - mean[i]);
    let p = &x * x.transpose() / (m - 1) as f64;
    let s = &p + DMatrix::from_diagonal(&DVector::from_column_slice(r));
    let gain = &p * s.try_inverse().expect("P + R is positive definite");
    let innov = DVector::from_column_slice(y) - &mean;
    let post_mean = &mean + &gain * innov;
    let post_cov = (DMatrix::identity(n, n) - gain) * p;
    (post_mean, post_cov)
}

/// Sample covariance (M − 1 normalization) of an ensemble.
pub fn sample_covariance(ens: &Ensemble) -> DMatrix<f64> {
    let (m, n) = (ens.size(), ens.dim());
    let mean = ens.mean();
    let x = DMatrix::from_fn(n, m, |i, j| ens.members[j][i] - mean[i]);
    &x * x.transpose() / (m - 1) as f64
}
