//! Finite-difference verification of the hand-rolled backward pass, through
//! every layer and every loss formulation, plus the Bellman-fixed-point and
//! trivial-action oracle identities.

use stoqrl_core::exact::ground_state_dense;
use stoqrl_core::lattice::{apply_action, Action, Lattice, Sector, SpinConfig, StateSpace};
use stoqrl_core::mdp::{solve_tabular, Formulation, QTable};
use stoqrl_core::rng::Rng;
use stoqrl_core::{ModelKind, StoquasticModel};
use stoqrl_neural::loss::{
    bellman_loss_and_grads, bellman_residuals, loss_from_deltas, q_trivial_action, TableQ,
};
use stoqrl_neural::replay::Experience;
use stoqrl_neural::{QLearningProblem, QNetwork, TrainFormulation};

fn randomize_all_layers(net: &mut QNetwork, seed: u64) {
    let mut rng = Rng::new(seed);
    for layer in &mut net.layers {
        for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
            *w = 0.6 * (rng.uniform() - 0.5);
        }
    }
}

fn random_batch(problem: &QLearningProblem, n: usize, e0: f64, seed: u64) -> Vec<Experience> {
    let sites = problem.n_sites();
    let mut rng = Rng::new(seed);
    (0..n)
        .map(|_| {
            let s = SpinConfig::from_bits(rng.next_u64(), sites);
            let action = if problem.includes_stay() && rng.uniform() < 0.3 {
                Action::Stay
            } else {
                Action::Flip(rng.below(sites))
            };
            let next = apply_action(s, action).unwrap();
            Experience {
                state: s,
                action,
                reward: problem.reward(s, e0),
                next,
                terminal: problem.is_terminal_state(next),
            }
        })
        .collect()
}

fn loss_of(
    problem: &QLearningProblem,
    net: &QNetwork,
    target: &QNetwork,
    batch: &[Experience],
    e0: f64,
) -> f64 {
    let deltas = bellman_residuals(problem, net, target, batch, e0);
    loss_from_deltas(problem, &deltas)
}

/// Central finite differences over every parameter of every layer.
fn check_gradients(model: StoquasticModel, formulation: TrainFormulation, hidden: usize, channels: usize) {
    let problem = QLearningProblem::new(model, formulation).unwrap();
    let mut net = QNetwork::new(problem.model().lattice(), hidden, channels, 5).unwrap();
    randomize_all_layers(&mut net, 17);
    let mut target = net.clone();
    randomize_all_layers(&mut target, 33);
    let e0 = problem.initial_e0_estimate();
    let batch = random_batch(&problem, 4, e0, 91);

    let mut grads = net.zero_grads();
    bellman_loss_and_grads(&problem, &net, &target, &batch, e0, &mut grads).unwrap();

    let step = 1e-4;
    let mut checked = 0usize;
    for li in 0..net.layers.len() {
        let n_w = net.layers[li].weights.len();
        let n_b = net.layers[li].bias.len();
        for idx in 0..(n_w + n_b) {
            let read = |net: &QNetwork| {
                if idx < n_w {
                    net.layers[li].weights[idx]
                } else {
                    net.layers[li].bias[idx - n_w]
                }
            };
            let write = |net: &mut QNetwork, v: f64| {
                if idx < n_w {
                    net.layers[li].weights[idx] = v;
                } else {
                    net.layers[li].bias[idx - n_w] = v;
                }
            };
            let original = read(&net);
            write(&mut net, original + step);
            let up = loss_of(&problem, &net, &target, &batch, e0);
            write(&mut net, original - step);
            let down = loss_of(&problem, &net, &target, &batch, e0);
            write(&mut net, original);
            let numeric = (up - down) / (2.0 * step);
            let analytic = if idx < n_w {
                grads.layers[li].0[idx]
            } else {
                grads.layers[li].1[idx - n_w]
            };
            let scale = analytic.abs().max(numeric.abs()).max(1e-7);
            assert!(
                (analytic - numeric).abs() / scale < 1e-4,
                "{formulation:?} layer {li} param {idx}: analytic {analytic} vs numeric {numeric}"
            );
            checked += 1;
        }
    }
    assert!(checked > 50, "too few parameters exercised: {checked}");
}

fn ring_model(n: usize) -> StoquasticModel {
    StoquasticModel::new(ModelKind::Ising { j: 1.0, h: 1.0 }, Lattice::ring(n).unwrap()).unwrap()
}

fn torus_model(l: usize) -> StoquasticModel {
    StoquasticModel::new(ModelKind::Ising { j: 0.32758, h: 1.0 }, Lattice::torus(l).unwrap())
        .unwrap()
}

#[test]
fn gradients_1d_terminal() {
    check_gradients(ring_model(4), TrainFormulation::DiscreteTerminal, 2, 3);
}

#[test]
fn gradients_1d_infinite() {
    check_gradients(
        ring_model(4),
        TrainFormulation::DiscreteInfinite { shift: None },
        2,
        3,
    );
}

#[test]
fn gradients_1d_continuous() {
    check_gradients(ring_model(4), TrainFormulation::ContinuousFk { dt: 1e-3 }, 2, 3);
}

#[test]
fn gradients_2d_all_formulations() {
    for formulation in [
        TrainFormulation::DiscreteTerminal,
        TrainFormulation::DiscreteInfinite { shift: None },
        TrainFormulation::ContinuousFk { dt: 1e-3 },
    ] {
        check_gradients(torus_model(3), formulation, 2, 2);
    }
}

#[test]
fn zero_coefficient_means_zero_gradients() {
    // A batch whose residuals are all equal has zero variance-loss gradient.
    let problem = QLearningProblem::new(
        ring_model(4),
        TrainFormulation::DiscreteInfinite { shift: None },
    )
    .unwrap();
    let net = QNetwork::new(problem.model().lattice(), 2, 3, 5).unwrap(); // zero head: Q ≡ 0
    let target = net.clone();
    let e0 = problem.initial_e0_estimate();
    // All-same experience rows: residuals identical, Var = 0.
    let s = SpinConfig::from_bits(0b0101, 4);
    let batch: Vec<Experience> = (0..4)
        .map(|_| Experience {
            state: s,
            action: Action::Flip(1),
            reward: problem.reward(s, e0),
            next: s.with_flip(1),
            terminal: false,
        })
        .collect();
    let mut grads = net.zero_grads();
    let report = bellman_loss_and_grads(&problem, &net, &target, &batch, e0, &mut grads).unwrap();
    assert!(report.loss < 1e-28);
    for (w, b) in &grads.layers {
        assert!(w.iter().chain(b).all(|&g| g == 0.0));
    }
}

#[test]
fn gradient_scales_linearly_with_loss() {
    // Duplicating every batch item beside itself halves nothing; but scaling
    // all residuals by moving the target by a constant leaves variance-loss
    // gradients unchanged (shift invariance at the gradient level).
    let problem = QLearningProblem::new(
        ring_model(4),
        TrainFormulation::DiscreteInfinite { shift: None },
    )
    .unwrap();
    let mut net = QNetwork::new(problem.model().lattice(), 2, 3, 5).unwrap();
    randomize_all_layers(&mut net, 3);
    let mut target = net.clone();
    randomize_all_layers(&mut target, 4);
    let e0 = problem.initial_e0_estimate();
    let batch = random_batch(&problem, 6, e0, 8);

    let mut grads = net.zero_grads();
    bellman_loss_and_grads(&problem, &net, &target, &batch, e0, &mut grads).unwrap();
    let reference: Vec<f64> = grads.layers[0].0.clone();

    // Shift every target bias by a constant: all bootstraps move together,
    // residuals shift by the same constant, variance loss and grads agree.
    for b in &mut target.layers.last_mut().unwrap().bias {
        *b += 0.7;
    }
    let mut grads2 = net.zero_grads();
    bellman_loss_and_grads(&problem, &net, &target, &batch, e0, &mut grads2).unwrap();
    for (a, b) in reference.iter().zip(&grads2.layers[0].0) {
        assert!((a - b).abs() < 1e-12);
    }
}

/// Flip-ordered Q rows extracted from a solved tabular problem.
fn tabular_flip_rows(q: &QTable) -> Vec<Vec<f64>> {
    q.rows
        .iter()
        .map(|row| {
            row.iter()
                .filter_map(|&(a, _, value)| match a {
                    Action::Flip(_) => Some(value),
                    _ => None,
                })
                .collect()
        })
        .collect()
}

#[test]
fn loss_vanishes_at_the_tabular_optimum() {
    let model = ring_model(4);
    let space = StateSpace::new(model.lattice(), Sector::Full, 20).unwrap();
    let gs = ground_state_dense(&model, &space).unwrap();
    let shift = model.max_diag(&space) + 1.0;

    // Discrete formulations: optimum from the solved tabular problem.
    // Continuous formulation: optimum straight from the oracle pair,
    // Q*(s,a) = E0·Δt - V(s)·Δt + log φ0(a(s)), at the reference Δt = 1e-4.
    let dt = 1e-4;
    let fk_rows: Vec<Vec<f64>> = space
        .states()
        .iter()
        .map(|&s| {
            (0..4)
                .map(|site| {
                    (gs.energy - model.potential(s)) * dt
                        + gs.amplitude(&space, s.with_flip(site)).ln()
                })
                .collect()
        })
        .collect();
    let cases = vec![
        (
            Some(Formulation::DiscreteInfinite { shift }),
            TrainFormulation::DiscreteInfinite { shift: Some(shift) },
        ),
        (
            Some(Formulation::DiscreteTerminal {
                terminals: vec![SpinConfig::all_up(4), SpinConfig::all_down(4)],
                e0: gs.energy,
            }),
            TrainFormulation::DiscreteTerminal,
        ),
        (None, TrainFormulation::ContinuousFk { dt }),
    ];
    for (core_formulation, train_formulation) in cases {
        let rows = match &core_formulation {
            Some(f) => {
                let table = solve_tabular(f, &model, &space, 1e-14, 5_000_000).unwrap();
                let q = QTable::from_value_table(f, &model, &space, &table).unwrap();
                tabular_flip_rows(&q)
            }
            None => fk_rows.clone(),
        };
        let table_q = TableQ {
            space: &space,
            rows,
        };
        let problem = QLearningProblem::new(model.clone(), train_formulation).unwrap();
        let e0 = gs.energy;
        let mut rng = Rng::new(44);
        let batch: Vec<Experience> = (0..32)
            .map(|_| {
                let s = SpinConfig::from_bits(rng.next_u64(), 4);
                let action = if problem.includes_stay() && rng.uniform() < 0.4 {
                    Action::Stay
                } else {
                    Action::Flip(rng.below(4))
                };
                let next = apply_action(s, action).unwrap();
                Experience {
                    state: s,
                    action,
                    reward: problem.reward(s, e0),
                    next,
                    terminal: problem.is_terminal_state(next),
                }
            })
            .collect();
        let deltas = bellman_residuals(&problem, &table_q, &table_q, &batch, e0);
        let loss = loss_from_deltas(&problem, &deltas);
        assert!(
            loss < 1e-10,
            "{train_formulation:?}: loss at optimum = {loss}"
        );
    }
}

#[test]
fn trivial_action_closure_matches_tabular_q() {
    // For a network encoding the exact tabular flip values, the a0 closure
    // reproduces tabular Q(s, a0).
    for n in [4usize, 6] {
        let model = ring_model(n);
        let space = StateSpace::new(model.lattice(), Sector::Full, 20).unwrap();
        let shift = model.max_diag(&space) + 1.0;
        let formulation = Formulation::DiscreteInfinite { shift };
        let table = solve_tabular(&formulation, &model, &space, 1e-14, 1_000_000).unwrap();
        let q = QTable::from_value_table(&formulation, &model, &space, &table).unwrap();
        let e0 = table.energy_estimate(&formulation).unwrap();
        for (i, row) in q.rows.iter().enumerate() {
            let s = space.state(i);
            let stay_value = row
                .iter()
                .find(|&&(a, _, _)| a == Action::Stay)
                .map(|&(_, _, v)| v)
                .unwrap();
            let flips: Vec<f64> = row
                .iter()
                .filter_map(|&(a, _, v)| matches!(a, Action::Flip(_)).then_some(v))
                .collect();
            let closed = q_trivial_action(&model, s, &flips, e0).unwrap();
            assert!(
                (closed - stay_value).abs() < 1e-6,
                "n={n} state {s}: closure {closed} vs tabular {stay_value}"
            );
        }
    }
}
