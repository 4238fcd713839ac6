mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use turbda::forecast::{Ensemble, Workers};
use turbda::letkf::{letkf_analyze, LetkfConfig};
use turbda::observation::{state_location, ObsOperator, Observation};
use turbda::sqg::GridSpec;

use common::global_etkf;

fn small_grid() -> GridSpec {
    GridSpec::new(8, 8, 80.0, 80.0, 1.0).unwrap()
}

fn random_ensemble(dim: usize, m: usize, key: u64) -> Ensemble {
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    let members = (0..m).map(|_| (0..dim).map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal)).collect()).collect();
    Ensemble::new(members, (0..m as u64).collect(), 0.0).unwrap()
}

fn global_config() -> LetkfConfig {
    LetkfConfig { cutoff_km: f64::INFINITY, rtps_alpha: 0.0, ..LetkfConfig::default() }
}

fn select_obs(grid: &GridSpec, idx: Vec<usize>, key: u64) -> Observation {
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    let y = idx.iter().map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
    let r = idx.iter().map(|_| 0.5 + rng.random::<f64>()).collect();
    let locs = idx.iter().map(|&k| state_location(grid, k)).collect();
    Observation::new(y, locs, ObsOperator::Select(idx), r, 0.0).unwrap()
}

#[test]
fn unbounded_cutoff_equals_global_etkf() {
    let grid = small_grid();
    let ens = random_ensemble(grid.state_dim(), 6, 1);
    let obs = select_obs(&grid, (0..grid.state_dim()).step_by(5).collect(), 2);
    let an = letkf_analyze(&ens, &obs, &global_config(), &grid, &Workers::new(2).unwrap()).unwrap();
    let oracle = global_etkf(&ens, &obs);
    for (a, b) in an.members.iter().zip(&oracle) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-8, "{x} vs {y}");
        }
    }
}

#[test]
fn global_limit_is_member_permutation_equivariant() {
    let grid = small_grid();
    let ens = random_ensemble(grid.state_dim(), 5, 3);
    let obs = select_obs(&grid, (0..grid.state_dim()).step_by(3).collect(), 4);
    let perm = [3, 0, 4, 1, 2];
    let permuted =
        Ensemble::new(perm.iter().map(|&p| ens.members[p].clone()).collect(), (0..5).collect(), 0.0).unwrap();
    let w = Workers::new(1).unwrap();
    let a = letkf_analyze(&ens, &obs, &global_config(), &grid, &w).unwrap();
    let b = letkf_analyze(&permuted, &obs, &global_config(), &grid, &w).unwrap();
    for (k, &p) in perm.iter().enumerate() {
        for (x, y) in b.members[k].iter().zip(&a.members[p]) {
            assert!((x - y).abs() < 1e-10);
        }
    }
}

#[test]
fn vanishing_obs_error_pulls_mean_onto_observations() {
    let grid = small_grid();
    let n = grid.state_dim();
    // the ensemble must span observation space for the limit to be reachable
    let ens = random_ensemble(n, n + 12, 5);
    let mut last = f64::INFINITY;
    for &r in &[1e-2, 1e-4, 1e-6] {
        let mut obs = select_obs(&grid, (0..n).collect(), 6);
        obs.r_diag = vec![r; n];
        let an = letkf_analyze(&ens, &obs, &global_config(), &grid, &Workers::new(1).unwrap()).unwrap();
        let err = an.mean().iter().zip(&obs.y).map(|(a, y)| (a - y).abs()).fold(0.0, f64::max);
        assert!(err < last);
        last = err;
    }
    assert!(last < 1e-3, "residual {last}");
}

#[test]
fn localized_update_is_local() {
    let grid = small_grid();
    let ens = random_ensemble(grid.state_dim(), 6, 7);
    // one observation at the origin, cut-off of one grid length
    let obs = select_obs(&grid, vec![0], 8);
    let cfg = LetkfConfig { cutoff_km: 10.0, domain_km: 80.0, rtps_alpha: 0.0, obs_thinning: None };
    let an = letkf_analyze(&ens, &obs, &cfg, &grid, &Workers::new(1).unwrap()).unwrap();
    let far = 4 * grid.nx + 4;
    assert_eq!(
        an.members.iter().map(|x| x[far]).collect::<Vec<_>>(),
        ens.members.iter().map(|x| x[far]).collect::<Vec<_>>()
    );
    assert_ne!(an.members[0][0], ens.members[0][0]);
}
