//! Cross-route consistency of the tabular solvers: value iteration,
//! desirability power iteration, and the dense oracle must agree, and the
//! continuous-time objective at the optimum must reproduce -E0.

use stoqrl_core::exact::{ground_state_dense, variational_energy_exact};
use stoqrl_core::fk::{entropy_rate, DoobRates, RateMap};
use stoqrl_core::lattice::{Lattice, Sector, SpinConfig, StateSpace};
use stoqrl_core::mdp::{
    desirability_power_iteration, solve_tabular, solve_terminal_self_consistent, Formulation,
};
use stoqrl_core::{ModelKind, StoquasticModel};

fn ising(lat: Lattice, j: f64, h: f64) -> (StoquasticModel, StateSpace) {
    let model = StoquasticModel::new(ModelKind::Ising { j, h }, lat).unwrap();
    let space = StateSpace::new(model.lattice(), Sector::Full, 20).unwrap();
    (model, space)
}

fn max_centered_spread(a: &[f64], b: &[f64]) -> f64 {
    // max_i |a_i - b_i - mean(a-b)|: distance up to an additive constant.
    let n = a.len() as f64;
    let mean: f64 = a.iter().zip(b).map(|(x, y)| x - y).sum::<f64>() / n;
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y - mean).abs())
        .fold(0.0, f64::max)
}

#[test]
fn value_iteration_matches_desirability_route() {
    // Both discrete formulations, a handful of lattices.
    for lat in [Lattice::ring(4).unwrap(), Lattice::ring(6).unwrap()] {
        let (model, space) = ising(lat, 0.7, 1.0);
        let gs = ground_state_dense(&model, &space).unwrap();
        let shift = model.max_diag(&space) + 1.0;

        let infinite = Formulation::DiscreteInfinite { shift };
        let vi = solve_tabular(&infinite, &model, &space, 1e-13, 200_000).unwrap();
        let (log_z, r_star) =
            desirability_power_iteration(&infinite, &model, &space, 1e-12, 200_000).unwrap();
        assert!(max_centered_spread(&vi.u, &log_z) < 1e-8);
        assert!((vi.r_star - r_star).abs() < 1e-8);

        let terminals = vec![SpinConfig::all_up(model.n_sites()), SpinConfig::all_down(model.n_sites())];
        let terminal = Formulation::DiscreteTerminal {
            terminals: terminals.clone(),
            e0: gs.energy,
        };
        let vi_t = solve_tabular(&terminal, &model, &space, 1e-13, 200_000).unwrap();
        let (log_z_t, _) =
            desirability_power_iteration(&terminal, &model, &space, 1e-12, 200_000).unwrap();
        assert!(max_centered_spread(&vi_t.u, &log_z_t) < 1e-8);
    }
}

#[test]
fn discrete_solvers_recover_the_oracle() {
    // exp(U*) ∝ φ0 (max relative error < 1e-6) and E0 within 1e-8, for
    // chains and the 3x3 lattice, both discrete formulations.
    let lattices = vec![
        Lattice::ring(4).unwrap(),
        Lattice::ring(8).unwrap(),
        Lattice::torus(3).unwrap(),
    ];
    for lat in lattices {
        let (model, space) = ising(lat, 1.0, 1.0);
        let gs = ground_state_dense(&model, &space).unwrap();
        let shift = model.max_diag(&space) + 1.0;

        let infinite = Formulation::DiscreteInfinite { shift };
        let table = solve_tabular(&infinite, &model, &space, 1e-13, 400_000).unwrap();
        let e0 = table.energy_estimate(&infinite).unwrap();
        assert!(
            (e0 - gs.energy).abs() < 1e-8,
            "infinite-horizon E0 {e0} vs oracle {}",
            gs.energy
        );
        let log_phi0: Vec<f64> = gs.amplitudes.iter().map(|a| a.ln()).collect();
        assert!(max_centered_spread(&table.u, &log_phi0) < 1e-6);

        let terminals = vec![
            SpinConfig::all_up(model.n_sites()),
            SpinConfig::all_down(model.n_sites()),
        ];
        let (table_t, e0_t) =
            solve_terminal_self_consistent(&model, &space, terminals, 1e-12, 400_000).unwrap();
        assert!(
            (e0_t - gs.energy).abs() < 1e-8,
            "terminal E0 {e0_t} vs oracle {}",
            gs.energy
        );
        assert!(max_centered_spread(&table_t.u, &log_phi0) < 1e-6);
    }
}

#[test]
fn continuous_formulation_bias_is_first_order_in_dt() {
    let (model, space) = ising(Lattice::open_chain(2).unwrap(), 1.0, 1.0);
    let exact = -(5.0f64.sqrt());
    for dt in [1e-3, 1e-4] {
        let fk = Formulation::ContinuousFk { dt };
        let table = solve_tabular(&fk, &model, &space, 1e-14, 5_000_000).unwrap();
        let e0 = table.energy_estimate(&fk).unwrap();
        assert!(
            (e0 - exact).abs() < 5.0 * dt * exact.abs(),
            "dt={dt}: E0 = {e0}"
        );
    }
}

#[test]
fn doob_chain_leaves_phi_squared_stationary() {
    // Brute-force stationary oracle: evolve a distribution under the
    // uniformized Γ* chain until stationary; compare against φ0².
    for lat in [Lattice::ring(6).unwrap(), Lattice::torus(3).unwrap()] {
        let (model, space) = ising(lat, 0.6, 1.0);
        let gs = ground_state_dense(&model, &space).unwrap();
        let doob = DoobRates::from_amplitudes(&model, &space, &gs.amplitudes).unwrap();

        let n = space.len();
        let rows: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|i| {
                doob.rates_from(space.state(i))
                    .into_iter()
                    .map(|(s2, r)| (space.index_of(s2).unwrap(), r))
                    .collect()
            })
            .collect();
        let max_exit: f64 = rows
            .iter()
            .map(|r| r.iter().map(|&(_, x)| x).sum::<f64>())
            .fold(0.0, f64::max);
        let dt = 0.5 / max_exit;
        let mut rho = vec![1.0 / n as f64; n];
        for _ in 0..20_000 {
            let mut next = rho.clone();
            for i in 0..n {
                for &(j, rate) in &rows[i] {
                    let flow = rho[i] * rate * dt;
                    next[i] -= flow;
                    next[j] += flow;
                }
            }
            rho = next;
        }
        let total: f64 = rho.iter().sum();
        for i in 0..n {
            let expect = gs.amplitudes[i] * gs.amplitudes[i];
            assert!(
                (rho[i] / total - expect).abs() < 1e-8,
                "stationary mass {} vs φ0² {}",
                rho[i] / total,
                expect
            );
        }
    }
}

#[test]
fn entropy_reward_balance_at_the_optimum() {
    // Averaging V + H over the stationary law φ0² of the optimal rates
    // gives exactly E0, so the maximum-entropy objective attains -E0.
    for lat in [Lattice::ring(4).unwrap(), Lattice::ring(8).unwrap()] {
        let (model, space) = ising(lat, 1.0, 1.0);
        let gs = ground_state_dense(&model, &space).unwrap();
        let doob = DoobRates::from_amplitudes(&model, &space, &gs.amplitudes).unwrap();
        let mut expectation = 0.0;
        for i in 0..space.len() {
            let s = space.state(i);
            let weight = gs.amplitudes[i] * gs.amplitudes[i];
            let h = entropy_rate(&doob.rates_from(s), &model.passive_rates(s)).unwrap();
            expectation += weight * (model.potential(s) + h);
        }
        assert!(
            (expectation - gs.energy).abs() < 1e-6,
            "E[V+H] = {expectation} vs E0 = {}",
            gs.energy
        );
    }
}

#[test]
fn xxz_sector_coverage() {
    // XXX ring in the m = 0 sector: flat potential, E0 = -J·B, uniform φ0,
    // and the tabular route agrees to tight tolerance.
    let lat = Lattice::ring(4).unwrap();
    let j = 1.0;
    let model = StoquasticModel::new(ModelKind::Xxz { j, j_perp: j }, lat.clone()).unwrap();
    let space = StateSpace::new(&lat, Sector::Magnetization(0), 20).unwrap();

    let vs: Vec<f64> = space.states().iter().map(|&s| model.potential(s)).collect();
    assert!(vs.iter().all(|&v| v == vs[0]), "potential not flat: {vs:?}");

    let gs = ground_state_dense(&model, &space).unwrap();
    let bonds = lat.bonds().len() as f64;
    assert!((gs.energy + j * bonds).abs() < 1e-10);
    let uniform = 1.0 / (space.len() as f64).sqrt();
    for &a in &gs.amplitudes {
        assert!((a - uniform).abs() < 1e-10);
    }

    let shift = model.max_diag(&space) + 1.0;
    let infinite = Formulation::DiscreteInfinite { shift };
    let table = solve_tabular(&infinite, &model, &space, 1e-13, 200_000).unwrap();
    let e0 = table.energy_estimate(&infinite).unwrap();
    assert!((e0 + j * bonds).abs() < 1e-10);
    let e_var = variational_energy_exact(&model, &space, |s| {
        table.u[space.index_of(s).unwrap()].exp()
    })
    .unwrap();
    assert!((e_var + j * bonds).abs() < 1e-10);
}
