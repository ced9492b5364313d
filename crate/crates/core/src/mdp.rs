//! The three reinforcement-learning formulations of the ground-state
//! problem, soft Bellman backups, tabular solvers, and the desirability
//! (linear) route.
//!
//! All three share one identification: the optimal state-value is the
//! log-amplitude, U*(s) = log φ0(s), and the optimal policy tilts the
//! reference policy by exp(Q). They differ in reference policy, reward, and
//! horizon:
//!
//! | formulation        | time       | reference policy         | reward                    |
//! |--------------------|------------|--------------------------|---------------------------|
//! | `ContinuousFk`     | Δt steps   | passive policy p_Δt      | -V(s)·Δt                  |
//! | `DiscreteInfinite` | discrete   | p1 (may stay)            | log Z1(s)                 |
//! | `DiscreteTerminal` | discrete   | p2 (always moves)        | log(Z2(s)/(H_ss - E0))    |
//!
//! Soft backups are computed in log space throughout; expectations of
//! exponentials never leave log-sum-exp form.

use crate::error::{Error, Result};
use crate::fk::DoobRates;
use crate::hamiltonian::{check_ergodic, Ergodicity, StoquasticModel};
use crate::lattice::{Action, SpinConfig, StateSpace};
use crate::numeric::log_sum_exp;
use rayon::prelude::*;

/// One of the three RL formulations, bundling reward function, reference
/// policy, and horizon semantics.
#[derive(Debug, Clone, PartialEq)]
pub enum Formulation {
    /// Continuous-time Feynman-Kac problem on a Δt-discretized action space.
    ContinuousFk { dt: f64 },
    /// Infinite-horizon discrete problem; `shift` is the constant C of the
    /// underlying stochastic representation.
    DiscreteInfinite { shift: f64 },
    /// Terminal-states problem; U* = 0 on `terminals`, and the reward needs
    /// an estimate of the ground-state energy.
    DiscreteTerminal {
        terminals: Vec<SpinConfig>,
        e0: f64,
    },
}

impl Formulation {
    /// Whether the trivial action a0 carries reference-policy mass.
    pub fn includes_stay(&self) -> bool {
        !matches!(self, Formulation::DiscreteTerminal { .. })
    }

    pub fn is_terminal_state(&self, s: SpinConfig) -> bool {
        match self {
            Formulation::DiscreteTerminal { terminals, .. } => terminals.contains(&s),
            _ => false,
        }
    }

    /// State reward r(s).
    pub fn reward(&self, model: &StoquasticModel, s: SpinConfig) -> Result<f64> {
        match *self {
            Formulation::ContinuousFk { dt } => Ok(-model.potential(s) * dt),
            Formulation::DiscreteInfinite { shift } => {
                // Z1(s) = C - H_ss - Σ H_ss' = C - V(s)
                Ok((shift - model.potential(s)).ln())
            }
            Formulation::DiscreteTerminal { e0, .. } => {
                let z2 = model.total_exit_rate(s);
                if z2 <= 0.0 {
                    return Err(Error::NonErgodic {
                        state: s.to_string(),
                    });
                }
                let denom = model.diag_element(s) - e0;
                if denom <= 0.0 {
                    return Err(Error::InvalidScale {
                        diag: model.diag_element(s),
                        e0,
                    });
                }
                Ok((z2 / denom).ln())
            }
        }
    }

    /// Reference policy p(a|s) as (action, probability) pairs.
    pub fn ref_policy(
        &self,
        model: &StoquasticModel,
        s: SpinConfig,
    ) -> Result<Vec<(Action, f64)>> {
        match *self {
            Formulation::ContinuousFk { dt } => passive_policy_dt(model, s, dt),
            Formulation::DiscreteInfinite { shift } => {
                let z1 = shift - model.potential(s);
                let mut policy = vec![(Action::Stay, (shift - model.diag_element(s)) / z1)];
                policy.extend(
                    model
                        .offdiag_transitions(s)
                        .into_iter()
                        .map(|(a, _, elem)| (a, -elem / z1)),
                );
                Ok(policy)
            }
            Formulation::DiscreteTerminal { .. } => {
                let z2 = model.total_exit_rate(s);
                if z2 <= 0.0 {
                    return Err(Error::NonErgodic {
                        state: s.to_string(),
                    });
                }
                Ok(model
                    .offdiag_transitions(s)
                    .into_iter()
                    .map(|(a, _, elem)| (a, -elem / z2))
                    .collect())
            }
        }
    }
}

/// Passive policy of the Δt-discretized continuous-time problem:
/// P(a) = Γ_{s→a(s)}·Δt for moves, the remainder on the trivial action.
pub fn passive_policy_dt(
    model: &StoquasticModel,
    s: SpinConfig,
    dt: f64,
) -> Result<Vec<(Action, f64)>> {
    let exit = model.total_exit_rate(s);
    if exit * dt >= 1.0 {
        return Err(Error::TimestepTooLarge {
            dt,
            exit_rate: exit,
        });
    }
    let mut policy = vec![(Action::Stay, 1.0 - exit * dt)];
    policy.extend(
        model
            .offdiag_transitions(s)
            .into_iter()
            .map(|(a, _, elem)| (a, -elem * dt)),
    );
    Ok(policy)
}

/// State-value table over a sector, with the average reward of the optimal
/// policy where the horizon is infinite.
#[derive(Debug, Clone)]
pub struct ValueTable {
    pub u: Vec<f64>,
    pub r_star: f64,
    pub sweeps: usize,
    pub sup_change: f64,
}

impl ValueTable {
    /// E0 implied by R*: R*/Δt for the continuous formulation,
    /// C - exp(-R*) for the infinite discrete one. Terminal problems carry
    /// no R*; extract the energy variationally instead.
    pub fn energy_estimate(&self, formulation: &Formulation) -> Option<f64> {
        match *formulation {
            Formulation::ContinuousFk { dt } => Some(self.r_star / dt),
            Formulation::DiscreteInfinite { shift } => Some(shift - (-self.r_star).exp()),
            Formulation::DiscreteTerminal { .. } => None,
        }
    }
}

/// Precomputed tabular form of a formulation over a sector: per-state
/// reward, reference-policy transitions, terminal flags, and the reference
/// state used to pin the additive constant.
#[derive(Debug, Clone)]
pub struct TabularMdp {
    /// Per state: (action, successor index, reference probability).
    transitions: Vec<Vec<(Action, usize, f64)>>,
    rewards: Vec<f64>,
    terminal: Vec<bool>,
    has_terminals: bool,
    /// Classical ground state (minimal H_ss), pins U in infinite-horizon sweeps.
    ref_state: usize,
}

impl TabularMdp {
    pub fn build(
        formulation: &Formulation,
        model: &StoquasticModel,
        space: &StateSpace,
    ) -> Result<Self> {
        if let Ergodicity::Components(c) = check_ergodic(model, space) {
            return Err(Error::DegenerateGroundState { components: c });
        }
        let n = space.len();
        let mut transitions = Vec::with_capacity(n);
        let mut rewards = Vec::with_capacity(n);
        let mut terminal = vec![false; n];
        for i in 0..n {
            let s = space.state(i);
            rewards.push(formulation.reward(model, s)?);
            let policy = formulation.ref_policy(model, s)?;
            let mut row = Vec::with_capacity(policy.len());
            for (a, p) in policy {
                let succ = crate::lattice::apply_action(s, a)?;
                let j = space.index_of(succ).ok_or_else(|| {
                    Error::InvalidWavefunction(format!(
                        "successor {succ} of {s} leaves the sector"
                    ))
                })?;
                row.push((a, j, p));
            }
            transitions.push(row);
        }

        let has_terminals = matches!(formulation, Formulation::DiscreteTerminal { .. });
        if let Formulation::DiscreteTerminal { terminals, .. } = formulation {
            if terminals.is_empty() {
                return Err(Error::TerminalUnreachable {
                    unreachable_from: n,
                });
            }
            for t in terminals {
                let i = space.index_of(*t).ok_or_else(|| {
                    Error::InvalidWavefunction(format!("terminal state {t} outside sector"))
                })?;
                terminal[i] = true;
            }
            // Reachability: BFS from the terminal set along reversed edges.
            let mut reached = terminal.clone();
            let mut queue: std::collections::VecDeque<usize> =
                (0..n).filter(|&i| terminal[i]).collect();
            let mut predecessors = vec![Vec::new(); n];
            for (i, row) in transitions.iter().enumerate() {
                for &(_, j, p) in row {
                    if p > 0.0 && j != i {
                        predecessors[j].push(i);
                    }
                }
            }
            while let Some(i) = queue.pop_front() {
                for &p in &predecessors[i] {
                    if !reached[p] {
                        reached[p] = true;
                        queue.push_back(p);
                    }
                }
            }
            let unreachable = reached.iter().filter(|&&r| !r).count();
            if unreachable > 0 {
                return Err(Error::TerminalUnreachable {
                    unreachable_from: unreachable,
                });
            }
        }

        let ref_state = {
            let mut best = 0;
            for i in 1..n {
                if model.diag_element(space.state(i)) < model.diag_element(space.state(best)) {
                    best = i;
                }
            }
            best
        };

        Ok(Self {
            transitions,
            rewards,
            terminal,
            has_terminals,
            ref_state,
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn is_terminal(&self, i: usize) -> bool {
        self.terminal[i]
    }

    pub fn transitions(&self, i: usize) -> &[(Action, usize, f64)] {
        &self.transitions[i]
    }

    /// Raw backup value r(s) + log E_{a~p}[exp U(a(s))] at one state.
    fn backup_at(&self, i: usize, u: &[f64]) -> f64 {
        let terms: Vec<f64> = self.transitions[i]
            .iter()
            .map(|&(_, j, p)| p.ln() + u[j])
            .collect();
        self.rewards[i] + log_sum_exp(&terms)
    }
}

/// One soft Bellman sweep U -> U'.
///
/// Terminal problems pin U' = 0 on terminal states; infinite-horizon
/// problems subtract the drift at the reference state each sweep (relative
/// value iteration), returning the implied R* estimate alongside. Sweeps are
/// double-buffered: U' is computed entirely from U.
pub fn soft_backup_u(mdp: &TabularMdp, u: &[f64]) -> (Vec<f64>, f64) {
    let raw: Vec<f64> = (0..mdp.len())
        .into_par_iter()
        .map(|i| {
            if mdp.terminal[i] {
                0.0
            } else {
                mdp.backup_at(i, u)
            }
        })
        .collect();
    if mdp.has_terminals {
        (raw, 0.0)
    } else {
        let drift = mdp.backup_at(mdp.ref_state, u) - u[mdp.ref_state];
        let normalized = raw.iter().map(|x| x - drift).collect();
        (normalized, -drift)
    }
}

/// Iterate soft backups to a sup-norm fixed point.
pub fn solve_tabular(
    formulation: &Formulation,
    model: &StoquasticModel,
    space: &StateSpace,
    tol: f64,
    max_sweeps: usize,
) -> Result<ValueTable> {
    let mdp = TabularMdp::build(formulation, model, space)?;
    let mut u = vec![0.0; mdp.len()];
    let mut last_change = f64::INFINITY;
    for sweep in 1..=max_sweeps {
        let (next, r_star) = soft_backup_u(&mdp, &u);
        let change = u
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        u = next;
        last_change = change;
        if change < tol {
            return Ok(ValueTable {
                u,
                r_star,
                sweeps: sweep,
                sup_change: change,
            });
        }
    }
    Err(Error::ConvergenceFailure {
        iterations: max_sweeps,
        last_change,
    })
}

/// Terminal-states solve with the energy entering the reward determined
/// self-consistently, so the route recovers E0 without an oracle.
///
/// The desirability operator of the terminal formulation at trial energy e
/// has Perron root λ(e), monotone increasing, with λ(E0) = 1 (that is the
/// Schrödinger equation). Bisect λ(e) = 1 between the Gershgorin bound
/// min_s (H_ss - Σ Γ) ≤ E0 and the diagonal minimum, then solve the value
/// table at the converged energy.
pub fn solve_terminal_self_consistent(
    model: &StoquasticModel,
    space: &StateSpace,
    terminals: Vec<SpinConfig>,
    tol: f64,
    max_sweeps: usize,
) -> Result<(ValueTable, f64)> {
    let min_diag = space
        .states()
        .iter()
        .map(|&s| model.diag_element(s))
        .fold(f64::INFINITY, f64::min);
    let mut lo = space
        .states()
        .iter()
        .map(|&s| model.diag_element(s) - model.total_exit_rate(s))
        .fold(f64::INFINITY, f64::min);
    let mut hi = min_diag - 1e-9 * (1.0 + min_diag.abs());
    let perron = |e0: f64| -> Result<f64> {
        let formulation = Formulation::DiscreteTerminal {
            terminals: terminals.clone(),
            e0,
        };
        let (_, r_star) =
            desirability_power_iteration(&formulation, model, space, 1e-12, max_sweeps)?;
        Ok((-r_star).exp())
    };
    // Flat-potential sectors sit exactly at the Gershgorin bound.
    if (perron(lo)? - 1.0).abs() < 1e-12 {
        let formulation = Formulation::DiscreteTerminal {
            terminals,
            e0: lo,
        };
        let table = solve_tabular(&formulation, model, space, tol, max_sweeps)?;
        return Ok((table, lo));
    }
    let scale = 1.0 + lo.abs().max(hi.abs());
    while hi - lo > 1e-13 * scale {
        let mid = 0.5 * (lo + hi);
        if perron(mid)? < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // Solve from below the root so the value iteration contracts.
    let e0 = lo;
    let formulation = Formulation::DiscreteTerminal {
        terminals,
        e0,
    };
    let table = solve_tabular(&formulation, model, space, tol, max_sweeps)?;
    Ok((table, 0.5 * (lo + hi)))
}

/// Dominant eigenvector of the linear desirability operator
/// z(s) <- e^{r(s)}·E_{a~p}[z(a(s))], returned as (log z, R* = -log λ).
///
/// The same fixed point as [`solve_tabular`] reached through Todorov's
/// linear route instead of log-space value iteration. Iterates the damped
/// operator (T + I)/2: same eigenvectors, but immune to the period-2
/// oscillation of never-staying chains on bipartite flip graphs.
pub fn desirability_power_iteration(
    formulation: &Formulation,
    model: &StoquasticModel,
    space: &StateSpace,
    tol: f64,
    max_sweeps: usize,
) -> Result<(Vec<f64>, f64)> {
    let mdp = TabularMdp::build(formulation, model, space)?;
    let n = mdp.len();
    let mut z = vec![1.0 / (n as f64).sqrt(); n];
    let mut last_change = f64::INFINITY;
    for _ in 1..=max_sweeps {
        // z is unit-norm on entry, so λ = z·Tz.
        let t_z: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| {
                let expect: f64 = mdp.transitions[i].iter().map(|&(_, j, p)| p * z[j]).sum();
                mdp.rewards[i].exp() * expect
            })
            .collect();
        let lambda: f64 = z.iter().zip(&t_z).map(|(a, b)| a * b).sum();
        let damped: Vec<f64> = z.iter().zip(&t_z).map(|(a, b)| 0.5 * (a + b)).collect();
        let norm = damped.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::InvalidWavefunction(
                "desirability iteration collapsed".into(),
            ));
        }
        // Direction convergence: the spread of per-state log changes is
        // invariant under overall rescaling and vanishes at the fixed point.
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (old, new) in z.iter().zip(&damped) {
            let d = (new / old).ln();
            lo = lo.min(d);
            hi = hi.max(d);
        }
        z = damped.into_iter().map(|x| x / norm).collect();
        last_change = hi - lo;
        if last_change < tol {
            let log_z = z.iter().map(|&x| x.ln()).collect();
            return Ok((log_z, -lambda.ln()));
        }
    }
    Err(Error::ConvergenceFailure {
        iterations: max_sweeps,
        last_change,
    })
}

/// Action-value table over a sector, aligned with the reference policy's
/// support at each state.
#[derive(Debug, Clone)]
pub struct QTable {
    /// Per state: (action, reference probability, Q value).
    pub rows: Vec<Vec<(Action, f64, f64)>>,
}

impl QTable {
    /// Q*(s,a) = R* + r(s) + U*(a(s)) from a solved value table.
    pub fn from_value_table(
        formulation: &Formulation,
        model: &StoquasticModel,
        space: &StateSpace,
        table: &ValueTable,
    ) -> Result<Self> {
        let mut rows = Vec::with_capacity(space.len());
        for i in 0..space.len() {
            let s = space.state(i);
            let r = formulation.reward(model, s)?;
            let policy = formulation.ref_policy(model, s)?;
            let mut row = Vec::with_capacity(policy.len());
            for (a, p) in policy {
                let succ = crate::lattice::apply_action(s, a)?;
                let j = space.index_of(succ).ok_or_else(|| {
                    Error::InvalidWavefunction("successor outside sector".into())
                })?;
                let u_succ = if formulation.is_terminal_state(succ) {
                    0.0
                } else {
                    table.u[j]
                };
                row.push((a, p, table.r_star + r + u_succ));
            }
            rows.push(row);
        }
        Ok(Self { rows })
    }

    /// log φ(s) at a state index.
    pub fn log_phi(&self, i: usize) -> f64 {
        log_wavefunction_from_q(self.rows[i].iter().map(|&(_, p, q)| (p, q)))
    }
}

/// log φ(s) = log E_{a~p}[exp Q(s,a)] from (probability, Q) pairs.
pub fn log_wavefunction_from_q(pairs: impl Iterator<Item = (f64, f64)>) -> f64 {
    let terms: Vec<f64> = pairs
        .filter(|&(p, _)| p > 0.0)
        .map(|(p, q)| p.ln() + q)
        .collect();
    log_sum_exp(&terms)
}

/// φ(s) = E_{a~p}[exp Q(s,a)], the wavefunction reconstructed from an
/// action-value function.
pub fn wavefunction_from_q(pairs: impl Iterator<Item = (f64, f64)>) -> f64 {
    log_wavefunction_from_q(pairs).exp()
}

/// Soft-argmax policy π*(a|s) ∝ p(a|s)·exp Q(s,a), invariant under constant
/// shifts of Q.
pub fn optimal_policy_from_q(row: &[(Action, f64, f64)]) -> Vec<(Action, f64)> {
    let max_q = row
        .iter()
        .filter(|&&(_, p, _)| p > 0.0)
        .map(|&(_, _, q)| q)
        .fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = row
        .iter()
        .map(|&(_, p, q)| if p > 0.0 { p * (q - max_q).exp() } else { 0.0 })
        .collect();
    let total: f64 = weights.iter().sum();
    row.iter()
        .zip(weights)
        .map(|(&(a, _, _), w)| (a, w / total))
        .collect()
}

/// Ground-state Doob transform of the passive dynamics:
/// Γ*_{s→s'} = Γ_{s→s'}·φ0(s')/φ0(s). These rates reproduce the
/// Feynman-Kac path measure and leave φ0² stationary.
pub fn optimal_rates<'a>(
    model: &'a StoquasticModel,
    space: &'a StateSpace,
    amplitudes: &[f64],
) -> Result<DoobRates<'a>> {
    DoobRates::from_amplitudes(model, space, amplitudes)
}
