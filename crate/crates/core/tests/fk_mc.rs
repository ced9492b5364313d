//! Monte-Carlo consistency of the Feynman-Kac estimators.

use stoqrl_core::exact::ground_state_dense;
use stoqrl_core::fk::{fk_estimate, fk_importance_estimate};
use stoqrl_core::lattice::{Lattice, Sector, SpinConfig, StateSpace};
use stoqrl_core::rng::Rng;
use stoqrl_core::{ModelKind, StoquasticModel};

#[test]
fn estimate_is_horizon_independent_with_oracle_inputs() {
    let lat = Lattice::ring(4).unwrap();
    let model = StoquasticModel::new(ModelKind::Ising { j: 1.0, h: 1.0 }, lat.clone()).unwrap();
    let space = StateSpace::new(&lat, Sector::Full, 20).unwrap();
    let gs = ground_state_dense(&model, &space).unwrap();
    let s0 = SpinConfig::all_up(4);
    let expect = gs.amplitude(&space, s0);

    let mut estimates = Vec::new();
    for (k, horizon) in [0.5, 1.0, 2.0].into_iter().enumerate() {
        let est = fk_estimate(
            &model,
            s0,
            horizon,
            gs.energy,
            &|s| gs.amplitude(&space, s),
            30_000,
            900 + k as u64,
        );
        assert!(
            (est.mean - expect).abs() < 3.0 * est.std_error,
            "T={horizon}: {} ± {} vs {expect}",
            est.mean,
            est.std_error
        );
        estimates.push(est);
    }
    for pair in estimates.windows(2) {
        let sigma = (pair[0].std_error.powi(2) + pair[1].std_error.powi(2)).sqrt();
        assert!((pair[0].mean - pair[1].mean).abs() < 3.0 * sigma);
    }
}

#[test]
fn importance_estimates_are_unbiased_for_random_tilts() {
    // Five random positive perturbations of the passive rates must agree
    // with the plain estimator within combined error bars.
    let lat = Lattice::open_chain(2).unwrap();
    let model = StoquasticModel::new(ModelKind::Ising { j: 1.0, h: 1.0 }, lat.clone()).unwrap();
    let s0 = SpinConfig::parse("+-").unwrap();
    let horizon = 1.0;
    let e0 = -(5.0f64.sqrt());
    let plain = fk_estimate(&model, s0, horizon, e0, &|_| 1.0, 60_000, 1234);

    let mut seed_rng = Rng::new(31337);
    for trial in 0..5 {
        // Random per-site tilt factors in [0.5, 2.5].
        let factors: Vec<f64> = (0..4).map(|_| 0.5 + 2.0 * seed_rng.uniform()).collect();
        let model_for_rates = model.clone();
        let tilted = move |s: SpinConfig| {
            model_for_rates
                .passive_rates(s)
                .into_iter()
                .enumerate()
                .map(|(k, (s2, r))| (s2, r * factors[k % factors.len()]))
                .collect::<Vec<_>>()
        };
        let est = fk_importance_estimate(
            &model,
            &tilted,
            s0,
            horizon,
            e0,
            &|_| 1.0,
            60_000,
            5000 + trial,
        )
        .unwrap();
        let sigma = (plain.std_error.powi(2) + est.std_error.powi(2)).sqrt();
        assert!(
            (est.mean - plain.mean).abs() < 3.0 * sigma,
            "trial {trial}: {} ± {} vs {} ± {}",
            est.mean,
            est.std_error,
            plain.mean,
            plain.std_error
        );
    }
}

#[test]
fn deterministic_across_runs_and_chunking() {
    let lat = Lattice::ring(4).unwrap();
    let model = StoquasticModel::new(ModelKind::Ising { j: 0.5, h: 1.0 }, lat).unwrap();
    let s0 = SpinConfig::all_down(4);
    let a = fk_estimate(&model, s0, 1.0, -3.0, &|_| 1.0, 4_096, 77);
    let b = fk_estimate(&model, s0, 1.0, -3.0, &|_| 1.0, 4_096, 77);
    assert_eq!(a.mean, b.mean);
    assert_eq!(a.std_error, b.std_error);
    assert_eq!(a.mean_jumps, b.mean_jumps);
}
