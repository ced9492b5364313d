//! Soft Q-learning losses.
//!
//! The network head outputs Q(s, Flip(site)) only. Where the reference
//! policy also carries the trivial action a0, its Q value is closed over the
//! flip values through the Schrödinger equation,
//! exp Q(s,a0) = Σ_a Γ_{s→a(s)} exp Q(s,a) / (H_ss - E0), so a0 is never
//! represented separately. The residual of the soft Bellman equation,
//! δ(s,a) = Q(s,a) - r(s) - log E_{a'~p(·|s')}[exp Q̄(s',a')], feeds a
//! variance loss for the infinite-horizon formulations (the constant R*
//! drops out) and a mean-squared-error loss for the terminal one (terminal
//! successors bootstrap with value 0). The inner expectation is exact: one
//! target-network call and known reference-policy probabilities.

use crate::error::{NeuralError, Result};
use crate::net::{NetGrads, QNetwork};
use crate::replay::Experience;
use rayon::prelude::*;
use stoqrl_core::error::Error as CoreError;
use stoqrl_core::lattice::{Action, SpinConfig};
use stoqrl_core::numeric::log_sum_exp;
use stoqrl_core::{ModelKind, StoquasticModel};

/// Formulation selector for training, before model-dependent constants are
/// resolved.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainFormulation {
    ContinuousFk { dt: f64 },
    /// `shift` defaults to the diagonal bound |J|·B + 1.
    DiscreteInfinite { shift: Option<f64> },
    /// Terminal states are the two entirely magnetized configurations.
    DiscreteTerminal,
}

/// An Ising soft-Q problem with its formulation constants resolved.
#[derive(Debug, Clone)]
pub struct QLearningProblem {
    model: StoquasticModel,
    formulation: Resolved,
    h: f64,
    n_sites: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Resolved {
    Fk { dt: f64 },
    Infinite { shift: f64 },
    Terminal,
}

impl QLearningProblem {
    /// The flip-head architecture matches the Ising action space only; XXZ
    /// exchange actions are covered by the tabular modules.
    pub fn new(model: StoquasticModel, formulation: TrainFormulation) -> Result<Self> {
        let ModelKind::Ising { j, h } = model.kind() else {
            return Err(NeuralError::Unsupported(
                "neural training supports the transverse-field Ising model only".into(),
            ));
        };
        let n_sites = model.n_sites();
        let resolved = match formulation {
            TrainFormulation::ContinuousFk { dt } => {
                if !(dt > 0.0) || dt * h * n_sites as f64 >= 1.0 {
                    return Err(NeuralError::Core(CoreError::TimestepTooLarge {
                        dt,
                        exit_rate: h * n_sites as f64,
                    }));
                }
                Resolved::Fk { dt }
            }
            TrainFormulation::DiscreteInfinite { shift } => {
                let c = shift.unwrap_or_else(|| model.diag_upper_bound() + 1.0);
                if c <= model.diag_upper_bound() {
                    return Err(NeuralError::Core(CoreError::InvalidShift {
                        shift: c,
                        max_diag: model.diag_upper_bound(),
                    }));
                }
                Resolved::Infinite { shift: c }
            }
            TrainFormulation::DiscreteTerminal => Resolved::Terminal,
        };
        let _ = j;
        Ok(Self {
            model,
            formulation: resolved,
            h,
            n_sites,
        })
    }

    pub fn model(&self) -> &StoquasticModel {
        &self.model
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn train_formulation(&self) -> TrainFormulation {
        match self.formulation {
            Resolved::Fk { dt } => TrainFormulation::ContinuousFk { dt },
            Resolved::Infinite { shift } => TrainFormulation::DiscreteInfinite {
                shift: Some(shift),
            },
            Resolved::Terminal => TrainFormulation::DiscreteTerminal,
        }
    }

    pub fn includes_stay(&self) -> bool {
        !matches!(self.formulation, Resolved::Terminal)
    }

    /// Classical ground-state energy -J·B, a strict upper bound for any
    /// admissible E0 estimate.
    pub fn classical_min_diag(&self) -> f64 {
        -self.model.diag_upper_bound()
    }

    /// Initial energy estimate: the classical bound minus h·N, guaranteed
    /// below E0.
    pub fn initial_e0_estimate(&self) -> f64 {
        self.classical_min_diag() - self.h * self.n_sites as f64
    }

    pub fn is_terminal_state(&self, s: SpinConfig) -> bool {
        matches!(self.formulation, Resolved::Terminal)
            && (s == SpinConfig::all_up(self.n_sites) || s == SpinConfig::all_down(self.n_sites))
    }

    pub fn terminal_states(&self) -> Vec<SpinConfig> {
        match self.formulation {
            Resolved::Terminal => vec![
                SpinConfig::all_up(self.n_sites),
                SpinConfig::all_down(self.n_sites),
            ],
            _ => Vec::new(),
        }
    }

    /// State reward r(s); the terminal formulation's reward carries the
    /// current energy estimate.
    pub fn reward(&self, s: SpinConfig, e0_est: f64) -> f64 {
        match self.formulation {
            Resolved::Fk { dt } => -self.model.potential(s) * dt,
            Resolved::Infinite { shift } => (shift - self.model.potential(s)).ln(),
            Resolved::Terminal => {
                let z2 = self.h * self.n_sites as f64;
                (z2 / (self.model.diag_element(s) - e0_est)).ln()
            }
        }
    }

    /// Q(s, a0) from the flip row (log space). All Ising rates equal h.
    pub fn q_stay(&self, s: SpinConfig, flip_q: &[f64], e0_est: f64) -> f64 {
        let denom = self.model.diag_element(s) - e0_est;
        debug_assert!(denom > 0.0, "energy estimate above a diagonal element");
        self.h.ln() + log_sum_exp(flip_q) - denom.ln()
    }

    /// d q_stay / d flip_q: the softmax of the flip row.
    fn q_stay_grad(&self, flip_q: &[f64]) -> Vec<f64> {
        let m = flip_q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = flip_q.iter().map(|&q| (q - m).exp()).collect();
        let total: f64 = weights.iter().sum();
        weights.into_iter().map(|w| w / total).collect()
    }

    /// Reference-policy log-probabilities aligned with [Stay?, flips...].
    fn policy_log_probs(&self, s: SpinConfig) -> (Option<f64>, f64) {
        let n = self.n_sites as f64;
        match self.formulation {
            Resolved::Fk { dt } => {
                let stay = 1.0 - self.h * n * dt;
                (Some(stay.ln()), (self.h * dt).ln())
            }
            Resolved::Infinite { shift } => {
                let z1 = shift - self.model.potential(s);
                let stay = (shift - self.model.diag_element(s)) / z1;
                (Some(stay.ln()), (self.h / z1).ln())
            }
            Resolved::Terminal => (None, -(n.ln())),
        }
    }

    /// U(s) = log φ(s) = log E_{a~p}[exp Q(s,a)] from the flip row.
    pub fn log_phi(&self, s: SpinConfig, flip_q: &[f64], e0_est: f64) -> f64 {
        let (stay_lp, flip_lp) = self.policy_log_probs(s);
        let mut terms: Vec<f64> = flip_q.iter().map(|&q| flip_lp + q).collect();
        if let Some(lp) = stay_lp {
            terms.push(lp + self.q_stay(s, flip_q, e0_est));
        }
        log_sum_exp(&terms)
    }

    /// Bootstrap value at a successor: 0 at terminal states, U(s') otherwise.
    pub fn bootstrap(&self, next: SpinConfig, target_row: &[f64], e0_est: f64) -> f64 {
        if self.is_terminal_state(next) {
            0.0
        } else {
            self.log_phi(next, target_row, e0_est)
        }
    }

    /// Behavior-policy logits ln p(a|s) + Q(s,a) over the action list.
    pub fn behavior_logits(
        &self,
        s: SpinConfig,
        flip_q: &[f64],
        e0_est: f64,
    ) -> (Vec<Action>, Vec<f64>) {
        let (stay_lp, flip_lp) = self.policy_log_probs(s);
        let mut actions = Vec::with_capacity(flip_q.len() + 1);
        let mut logits = Vec::with_capacity(flip_q.len() + 1);
        if let Some(lp) = stay_lp {
            actions.push(Action::Stay);
            logits.push(lp + self.q_stay(s, flip_q, e0_est));
        }
        for (site, &q) in flip_q.iter().enumerate() {
            actions.push(Action::Flip(site));
            logits.push(flip_lp + q);
        }
        (actions, logits)
    }

    /// Q(s, a) and its gradient pattern with respect to the flip row.
    fn q_of_action(
        &self,
        s: SpinConfig,
        flip_q: &[f64],
        action: Action,
        e0_est: f64,
    ) -> (f64, QGrad) {
        match action {
            Action::Flip(site) => (flip_q[site], QGrad::Unit(site)),
            Action::Stay => (
                self.q_stay(s, flip_q, e0_est),
                QGrad::Softmax(self.q_stay_grad(flip_q)),
            ),
            Action::Exchange(..) => unreachable!("Ising flip head has no exchange actions"),
        }
    }
}

enum QGrad {
    Unit(usize),
    Softmax(Vec<f64>),
}

/// General trivial-action closure over a model's off-diagonal transitions:
/// exp Q(s,a0) = Σ_a Γ_{s→a(s)}·exp Q(s,a) / (H_ss - E0), evaluated in log
/// space. `q_values` aligns with `model.offdiag_transitions(s)`.
pub fn q_trivial_action(
    model: &StoquasticModel,
    s: SpinConfig,
    q_values: &[f64],
    e0_est: f64,
) -> Result<f64> {
    let denom = model.diag_element(s) - e0_est;
    if denom <= 0.0 {
        return Err(NeuralError::Core(CoreError::InvalidScale {
            diag: model.diag_element(s),
            e0: e0_est,
        }));
    }
    let transitions = model.offdiag_transitions(s);
    if transitions.is_empty() {
        return Err(NeuralError::Core(CoreError::InvalidScale {
            diag: model.diag_element(s),
            e0: e0_est,
        }));
    }
    debug_assert_eq!(transitions.len(), q_values.len());
    let terms: Vec<f64> = transitions
        .iter()
        .zip(q_values)
        .map(|(&(_, _, elem), &q)| (-elem).ln() + q)
        .collect();
    Ok(log_sum_exp(&terms) - denom.ln())
}

/// Source of per-site flip Q rows: the convolutional network, or a
/// tabulated Q for oracle cross-checks.
pub trait QRows: Sync {
    fn q_rows(&self, states: &[SpinConfig]) -> Vec<Vec<f64>>;
}

impl QRows for QNetwork {
    fn q_rows(&self, states: &[SpinConfig]) -> Vec<Vec<f64>> {
        self.forward_batch(states)
    }
}

/// Flip-Q table over an enumerated sector.
pub struct TableQ<'a> {
    pub space: &'a stoqrl_core::lattice::StateSpace,
    /// Per state, Q(s, Flip(site)) in site order.
    pub rows: Vec<Vec<f64>>,
}

impl QRows for TableQ<'_> {
    fn q_rows(&self, states: &[SpinConfig]) -> Vec<Vec<f64>> {
        states
            .iter()
            .map(|&s| self.rows[self.space.index_of(s).expect("state in sector")].clone())
            .collect()
    }
}

/// Loss value and per-item residuals of one batch.
#[derive(Debug, Clone)]
pub struct LossReport {
    pub loss: f64,
    pub deltas: Vec<f64>,
}

/// Soft Bellman residuals δ_i of a batch, computed with the online network
/// at s_i and the target network at the successors.
pub fn bellman_residuals(
    problem: &QLearningProblem,
    net: &impl QRows,
    target: &impl QRows,
    batch: &[Experience],
    e0_est: f64,
) -> Vec<f64> {
    let next_states: Vec<SpinConfig> = batch.iter().map(|e| e.next).collect();
    let target_rows = target.q_rows(&next_states);
    let states: Vec<SpinConfig> = batch.iter().map(|e| e.state).collect();
    let rows = net.q_rows(&states);
    batch
        .par_iter()
        .zip(rows)
        .zip(target_rows)
        .map(|((e, row), t_row)| {
            let (q, _) = problem.q_of_action(e.state, &row, e.action, e0_est);
            let boot = problem.bootstrap(e.next, &t_row, e0_est);
            q - e.reward - boot
        })
        .collect()
}

/// Batch loss: Var[δ] for the infinite-horizon formulations (the constant
/// R* cancels), mean[δ²] for the terminal one.
pub fn loss_from_deltas(problem: &QLearningProblem, deltas: &[f64]) -> f64 {
    let n = deltas.len() as f64;
    if problem.includes_stay() {
        let mean: f64 = deltas.iter().sum::<f64>() / n;
        deltas.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n
    } else {
        deltas.iter().map(|d| d * d).sum::<f64>() / n
    }
}

/// Full training step payload: loss plus parameter gradients.
///
/// Gradients flow through Q(s_i, a_i) only (including the a0 closure when
/// the sampled action was Stay); the bootstrap side is held by the target
/// network.
pub fn bellman_loss_and_grads(
    problem: &QLearningProblem,
    net: &QNetwork,
    target: &QNetwork,
    batch: &[Experience],
    e0_est: f64,
    grads: &mut NetGrads,
) -> Result<LossReport> {
    // One traced forward per item serves both the residuals and the
    // backward pass.
    let traces: Vec<crate::net::Trace> = batch
        .par_iter()
        .map(|e| net.forward_traced(e.state))
        .collect();
    let next_states: Vec<SpinConfig> = batch.iter().map(|e| e.next).collect();
    let target_rows = target.q_rows(&next_states);
    let deltas: Vec<f64> = batch
        .par_iter()
        .zip(&traces)
        .zip(target_rows)
        .map(|((e, trace), t_row)| {
            let (q, _) = problem.q_of_action(e.state, &trace.output, e.action, e0_est);
            let boot = problem.bootstrap(e.next, &t_row, e0_est);
            q - e.reward - boot
        })
        .collect();
    let loss = loss_from_deltas(problem, &deltas);
    let n = deltas.len() as f64;
    let mean: f64 = deltas.iter().sum::<f64>() / n;
    let coeffs: Vec<f64> = if problem.includes_stay() {
        deltas.iter().map(|d| 2.0 * (d - mean) / n).collect()
    } else {
        deltas.iter().map(|d| 2.0 * d / n).collect()
    };

    grads.zero();
    // Deterministic parallel accumulation: fixed-size chunks reduced in
    // order, independent of thread scheduling.
    let chunk = 64.max(batch.len() / 32).min(batch.len().max(1));
    let partials: Vec<NetGrads> = batch
        .par_chunks(chunk)
        .zip(traces.par_chunks(chunk))
        .zip(coeffs.par_chunks(chunk))
        .map(|((items, chunk_traces), cs)| {
            let mut g = net.zero_grads();
            let mut d_out = vec![0.0; net.n_sites()];
            for ((e, trace), &c) in items.iter().zip(chunk_traces).zip(cs) {
                let (_, pattern) = problem.q_of_action(e.state, &trace.output, e.action, e0_est);
                d_out.iter_mut().for_each(|x| *x = 0.0);
                match pattern {
                    QGrad::Unit(site) => d_out[site] = c,
                    QGrad::Softmax(w) => {
                        for (g_site, w_site) in d_out.iter_mut().zip(&w) {
                            *g_site = c * w_site;
                        }
                    }
                }
                net.backward(trace, &d_out, &mut g);
            }
            g
        })
        .collect();
    for p in &partials {
        grads.add(p);
    }
    Ok(LossReport { loss, deltas })
}
