//! Brute-force oracles: dense ground-state solve by shifted power iteration,
//! the two discrete-time stochastic chains derived from the Schrödinger
//! equation, and exact local/variational energies.
//!
//! These are the ground truth used by every other module's tests.

use crate::error::{Error, Result};
use crate::hamiltonian::{check_ergodic, Ergodicity, StoquasticModel};
use crate::lattice::{SpinConfig, StateSpace};
use rayon::prelude::*;

/// Sparse row structure of H over an enumerated sector: diagonal plus
/// passive rates Γ_{s→s'} = -H_ss' in CSR form.
#[derive(Debug, Clone)]
pub struct TabularHamiltonian {
    diag: Vec<f64>,
    row_start: Vec<usize>,
    col: Vec<u32>,
    /// Per-edge rates; empty when `uniform_rate` applies to every edge.
    rate: Vec<f64>,
    uniform_rate: Option<f64>,
}

impl TabularHamiltonian {
    pub fn new(model: &StoquasticModel, space: &StateSpace) -> Self {
        let n = space.len();
        let diag: Vec<f64> = space
            .states()
            .par_iter()
            .map(|&s| model.diag_element(s))
            .collect();
        let rows: Vec<Vec<(u32, f64)>> = space
            .states()
            .par_iter()
            .map(|&s| {
                model
                    .passive_rates(s)
                    .into_iter()
                    .filter_map(|(s2, gamma)| {
                        space.index_of(s2).map(|k| (k as u32, gamma))
                    })
                    .collect()
            })
            .collect();
        let mut row_start = Vec::with_capacity(n + 1);
        row_start.push(0);
        let mut col = Vec::new();
        let mut rate = Vec::new();
        for row in &rows {
            for &(k, gamma) in row {
                col.push(k);
                rate.push(gamma);
            }
            row_start.push(col.len());
        }
        let uniform_rate = match rate.first() {
            Some(&r0) if rate.iter().all(|&r| r == r0) => Some(r0),
            _ => None,
        };
        if uniform_rate.is_some() {
            rate = Vec::new();
        }
        Self {
            diag,
            row_start,
            col,
            rate,
            uniform_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn max_diag(&self) -> f64 {
        self.diag.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        self.row_start[i]..self.row_start[i + 1]
    }

    /// Neighbors of row i as (column, passive rate) pairs.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_range(i);
        let rates = self.uniform_rate;
        range.map(move |k| {
            let gamma = rates.unwrap_or_else(|| self.rate[k]);
            (self.col[k] as usize, gamma)
        })
    }

    /// out = (shift·I - H)·v, elementwise over rows in parallel.
    pub fn shifted_matvec(&self, shift: f64, v: &[f64], out: &mut [f64]) {
        out.par_iter_mut().enumerate().for_each(|(i, o)| {
            let mut acc = (shift - self.diag[i]) * v[i];
            for (j, gamma) in self.row(i) {
                acc += gamma * v[j];
            }
            *o = acc;
        });
    }

    /// out = H·v.
    pub fn h_matvec(&self, v: &[f64], out: &mut [f64]) {
        out.par_iter_mut().enumerate().for_each(|(i, o)| {
            let mut acc = self.diag[i] * v[i];
            for (j, gamma) in self.row(i) {
                acc -= gamma * v[j];
            }
            *o = acc;
        });
    }

    /// Rayleigh quotient (v·Hv)/(v·v).
    pub fn rayleigh(&self, v: &[f64]) -> f64 {
        let mut hv = vec![0.0; v.len()];
        self.h_matvec(v, &mut hv);
        let num: f64 = v.iter().zip(&hv).map(|(a, b)| a * b).sum();
        let den: f64 = v.iter().map(|a| a * a).sum();
        num / den
    }
}

/// Dense H as nested Vecs, for small-sector tests.
pub fn dense_matrix(model: &StoquasticModel, space: &StateSpace) -> Vec<Vec<f64>> {
    let n = space.len();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        let s = space.state(i);
        m[i][i] = model.diag_element(s);
        for (s2, elem) in model.offdiag_row(s) {
            if let Some(j) = space.index_of(s2) {
                m[i][j] += elem;
            }
        }
    }
    m
}

/// Ground-state eigenpair of H over a sector.
#[derive(Debug, Clone)]
pub struct GroundState {
    /// Ground-state energy E0.
    pub energy: f64,
    /// Positive amplitudes aligned with the sector's state order, L2-normalized.
    pub amplitudes: Vec<f64>,
    /// ‖H·φ0 - E0·φ0‖_∞ at return.
    pub residual_inf: f64,
    pub iterations: usize,
}

impl GroundState {
    pub fn amplitude(&self, space: &StateSpace, s: SpinConfig) -> f64 {
        space.index_of(s).map_or(0.0, |i| self.amplitudes[i])
    }
}

/// Knobs for [`ground_state_dense_with`].
#[derive(Debug, Clone, Copy)]
pub struct PowerIterationOptions {
    /// Shift C > max_s H_ss; defaults to max_s H_ss + 1.
    pub shift: Option<f64>,
    /// Successive Rayleigh quotients must differ by less than this.
    pub rayleigh_tol: f64,
    /// ‖Hφ - E0φ‖_∞ must drop below this, scaled by max(1, |E0|).
    pub residual_tol: f64,
    pub max_iterations: usize,
}

impl Default for PowerIterationOptions {
    fn default() -> Self {
        Self {
            shift: None,
            rayleigh_tol: 1e-12,
            residual_tol: 1e-11,
            max_iterations: 500_000,
        }
    }
}

/// Dominant eigenpair of (C·I - H) by power iteration, i.e. the ground state
/// of H. Requires an ergodic sector so the Perron eigenvector is simple and
/// positive.
pub fn ground_state_dense(model: &StoquasticModel, space: &StateSpace) -> Result<GroundState> {
    ground_state_dense_with(model, space, PowerIterationOptions::default())
}

pub fn ground_state_dense_with(
    model: &StoquasticModel,
    space: &StateSpace,
    opts: PowerIterationOptions,
) -> Result<GroundState> {
    if let Ergodicity::Components(c) = check_ergodic(model, space) {
        return Err(Error::DegenerateGroundState { components: c });
    }
    let ham = TabularHamiltonian::new(model, space);
    let shift = match opts.shift {
        Some(c) => {
            if c <= ham.max_diag() {
                return Err(Error::InvalidShift {
                    shift: c,
                    max_diag: ham.max_diag(),
                });
            }
            c
        }
        None => ham.max_diag() + 1.0,
    };

    let n = space.len();
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut w = vec![0.0; n];
    let mut lambda_prev = f64::NAN;
    let mut iterations = 0;
    loop {
        ham.shifted_matvec(shift, &v, &mut w);
        // v is unit-norm, so λ = v·w and the eigen-residual of H comes for
        // free: H·v - (C-λ)·v = λ·v - w.
        let lambda: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        let residual = v
            .iter()
            .zip(&w)
            .map(|(vi, wi)| (lambda * vi - wi).abs())
            .fold(0.0, f64::max);
        let energy = shift - lambda;
        let norm = w.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.iter_mut().zip(&w).for_each(|(vi, wi)| *vi = wi / norm);
        iterations += 1;
        let change = (lambda - lambda_prev).abs();
        lambda_prev = lambda;
        let converged = change < opts.rayleigh_tol * lambda.abs().max(1.0)
            && residual < opts.residual_tol * energy.abs().max(1.0);
        if converged {
            return Ok(GroundState {
                energy,
                amplitudes: v,
                residual_inf: residual,
                iterations,
            });
        }
        if iterations >= opts.max_iterations {
            return Err(Error::ConvergenceFailure {
                iterations,
                last_change: change.max(residual),
            });
        }
    }
}

/// A discrete-time chain equivalent to the Schrödinger equation: the fixed
/// point φ0(s) = scale(s)·E_{s'~p(·|s)}[φ0(s')].
#[derive(Debug, Clone)]
pub struct MarkovChainSpec {
    /// Per-state transition rows (successor index, probability), self-loop included.
    pub rows: Vec<Vec<(usize, f64)>>,
    /// Per-state scale factor multiplying the one-step expectation.
    pub scale: Vec<f64>,
}

impl MarkovChainSpec {
    /// Row sums, for normalization checks.
    pub fn row_sum(&self, i: usize) -> f64 {
        self.rows[i].iter().map(|&(_, p)| p).sum()
    }

    /// ‖φ - scale·E_p[φ]‖_∞ relative to ‖φ‖_∞: how far φ is from the
    /// chain's fixed point.
    pub fn fixed_point_residual(&self, phi: &[f64]) -> f64 {
        let max_phi = phi.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
        let mut worst = 0.0f64;
        for i in 0..self.rows.len() {
            let expect: f64 = self.rows[i].iter().map(|&(j, p)| p * phi[j]).sum();
            worst = worst.max((phi[i] - self.scale[i] * expect).abs());
        }
        worst / max_phi
    }

    /// Transition probability p(j|i).
    pub fn prob(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .iter()
            .find(|&&(k, _)| k == j)
            .map_or(0.0, |&(_, p)| p)
    }
}

/// First representation: p1(s|s) = (C - H_ss)/Z1, p1(s'|s) = -H_ss'/Z1,
/// Z1(s) = C - H_ss - Σ H_ss', scale = Z1/(C - E0).
pub fn build_p1_chain(
    model: &StoquasticModel,
    space: &StateSpace,
    shift: f64,
    e0: f64,
) -> Result<MarkovChainSpec> {
    let ham = TabularHamiltonian::new(model, space);
    if shift <= ham.max_diag() {
        return Err(Error::InvalidShift {
            shift,
            max_diag: ham.max_diag(),
        });
    }
    let n = space.len();
    let mut rows = Vec::with_capacity(n);
    let mut scale = Vec::with_capacity(n);
    for i in 0..n {
        let exit: f64 = ham.row(i).map(|(_, gamma)| gamma).sum();
        let z1 = shift - ham.diag()[i] + exit;
        let mut row = vec![(i, (shift - ham.diag()[i]) / z1)];
        row.extend(ham.row(i).map(|(j, gamma)| (j, gamma / z1)));
        rows.push(row);
        scale.push(z1 / (shift - e0));
    }
    Ok(MarkovChainSpec { rows, scale })
}

/// Second representation: p2(s|s) = 0, p2(s'|s) = -H_ss'/Z2,
/// Z2(s) = -Σ H_ss', scale = Z2/(H_ss - E0). The chain changes state at
/// every step.
pub fn build_p2_chain(
    model: &StoquasticModel,
    space: &StateSpace,
    e0: f64,
) -> Result<MarkovChainSpec> {
    let ham = TabularHamiltonian::new(model, space);
    let n = space.len();
    let mut rows = Vec::with_capacity(n);
    let mut scale = Vec::with_capacity(n);
    for i in 0..n {
        let z2: f64 = ham.row(i).map(|(_, gamma)| gamma).sum();
        if z2 <= 0.0 {
            return Err(Error::NonErgodic {
                state: space.state(i).to_string(),
            });
        }
        let denom = ham.diag()[i] - e0;
        if denom <= 0.0 {
            return Err(Error::InvalidScale {
                diag: ham.diag()[i],
                e0,
            });
        }
        rows.push(ham.row(i).map(|(j, gamma)| (j, gamma / z2)).collect());
        scale.push(z2 / denom);
    }
    Ok(MarkovChainSpec { rows, scale })
}

/// Local energy (Hφ)(s)/φ(s), the full row including the diagonal term.
pub fn local_energy<F>(model: &StoquasticModel, phi: F, s: SpinConfig) -> Result<f64>
where
    F: Fn(SpinConfig) -> f64,
{
    let phi_s = phi(s);
    if phi_s == 0.0 {
        return Err(Error::DivisionByZeroAmplitude {
            state: s.to_string(),
        });
    }
    let mut acc = model.diag_element(s) * phi_s;
    for (s2, elem) in model.offdiag_row(s) {
        acc += elem * phi(s2);
    }
    Ok(acc / phi_s)
}

/// Exact variational energy Σ φ(s)²·E_loc(s) / Σ φ(s)² = (φ·Hφ)/(φ·φ) over
/// an enumerable sector. Bounded below by E0.
pub fn variational_energy_exact<F>(
    model: &StoquasticModel,
    space: &StateSpace,
    phi: F,
) -> Result<f64>
where
    F: Fn(SpinConfig) -> f64 + Sync,
{
    let values: Vec<f64> = space.states().par_iter().map(|&s| phi(s)).collect();
    if values.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidWavefunction("non-finite amplitude".into()));
    }
    let norm_sq: f64 = values.iter().map(|x| x * x).sum();
    if norm_sq == 0.0 {
        return Err(Error::InvalidWavefunction("all amplitudes zero".into()));
    }
    let ham = TabularHamiltonian::new(model, space);
    let mut hphi = vec![0.0; space.len()];
    ham.h_matvec(&values, &mut hphi);
    let quad: f64 = values.iter().zip(&hphi).map(|(a, b)| a * b).sum();
    Ok(quad / norm_sq)
}
