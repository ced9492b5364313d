//! Continuous-time Markov-chain simulation and Feynman-Kac estimation.
//!
//! Trajectories follow exponential-clock dynamics for a rate map (passive or
//! parameterized). The time integral of the potential is exact over holding
//! intervals; no time discretization enters here. Each trajectory draws from
//! its own counter-seeded stream, so estimates are reproducible and
//! independent of execution order.

use crate::error::{Error, Result};
use crate::hamiltonian::StoquasticModel;
use crate::lattice::{SpinConfig, StateSpace};
use crate::numeric::{mean_and_std_error, mean_and_variance, pairwise_sum};
use crate::rng::Rng;
use rayon::prelude::*;

/// Sign of the energy shift inside the Feynman-Kac weight
/// exp(-∫(V + FK_ENERGY_SHIFT_SIGN·E0) dt).
///
/// -1 (the V - E0 form) is the self-consistent choice: inserting the exact
/// (φ0, E0) makes the estimator reproduce φ0(s0) at every horizon, which the
/// acceptance suite pins down.
pub const FK_ENERGY_SHIFT_SIGN: f64 = -1.0;

/// Transition rates out of a state.
pub trait RateMap: Sync {
    fn rates_from(&self, s: SpinConfig) -> Vec<(SpinConfig, f64)>;
}

impl<F> RateMap for F
where
    F: Fn(SpinConfig) -> Vec<(SpinConfig, f64)> + Sync,
{
    fn rates_from(&self, s: SpinConfig) -> Vec<(SpinConfig, f64)> {
        self(s)
    }
}

/// The passive dynamics Γ_{s→s'} = -H_ss'.
pub struct PassiveRates<'a>(pub &'a StoquasticModel);

impl RateMap for PassiveRates<'_> {
    fn rates_from(&self, s: SpinConfig) -> Vec<(SpinConfig, f64)> {
        self.0.passive_rates(s)
    }
}

/// Doob-transformed rates Γ*_{s→s'} = Γ_{s→s'}·φ(s')/φ(s) for a positive
/// wavefunction φ given in log form.
pub struct DoobRates<'a> {
    model: &'a StoquasticModel,
    log_phi: Box<dyn Fn(SpinConfig) -> f64 + Sync + 'a>,
}

impl<'a> DoobRates<'a> {
    pub fn from_log_fn(
        model: &'a StoquasticModel,
        log_phi: impl Fn(SpinConfig) -> f64 + Sync + 'a,
    ) -> Self {
        Self {
            model,
            log_phi: Box::new(log_phi),
        }
    }

    /// Build from tabulated amplitudes aligned with `space`. Amplitudes must
    /// be strictly positive.
    pub fn from_amplitudes(
        model: &'a StoquasticModel,
        space: &'a StateSpace,
        amplitudes: &[f64],
    ) -> Result<Self> {
        for (i, &a) in amplitudes.iter().enumerate() {
            if a <= 0.0 {
                return Err(Error::DivisionByZeroAmplitude {
                    state: space.state(i).to_string(),
                });
            }
        }
        let log: Vec<f64> = amplitudes.iter().map(|a| a.ln()).collect();
        Ok(Self {
            model,
            log_phi: Box::new(move |s| {
                let i = space
                    .index_of(s)
                    .expect("Doob rates queried outside the tabulated sector");
                log[i]
            }),
        })
    }
}

impl RateMap for DoobRates<'_> {
    fn rates_from(&self, s: SpinConfig) -> Vec<(SpinConfig, f64)> {
        let log_s = (self.log_phi)(s);
        self.model
            .passive_rates(s)
            .into_iter()
            .map(|(s2, gamma)| {
                let tilt = ((self.log_phi)(s2) - log_s).exp();
                (s2, gamma * tilt)
            })
            .collect()
    }
}

/// A continuous-time path: visited states plus strictly increasing jump
/// times inside [0, horizon).
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<SpinConfig>,
    pub jump_times: Vec<f64>,
    pub horizon: f64,
}

impl Trajectory {
    pub fn n_jumps(&self) -> usize {
        self.jump_times.len()
    }

    pub fn final_state(&self) -> SpinConfig {
        *self.states.last().unwrap()
    }

    /// Holding segments as (state, duration); durations sum to the horizon.
    pub fn segments(&self) -> impl Iterator<Item = (SpinConfig, f64)> + '_ {
        let n = self.states.len();
        (0..n).map(move |i| {
            let start = if i == 0 { 0.0 } else { self.jump_times[i - 1] };
            let end = if i + 1 < n {
                self.jump_times[i]
            } else {
                self.horizon
            };
            (self.states[i], end - start)
        })
    }
}

/// Exponential-clock simulation of the chain generated by `rates`.
///
/// Holding times are exponential in the total exit rate; the successor is
/// drawn proportionally to individual rates. An absorbing state holds until
/// the horizon.
pub fn simulate_ctmc(
    rates: &impl RateMap,
    s0: SpinConfig,
    horizon: f64,
    rng: &mut Rng,
) -> Trajectory {
    debug_assert!(horizon >= 0.0);
    let mut states = vec![s0];
    let mut jump_times = Vec::new();
    let mut t = 0.0;
    let mut current = s0;
    loop {
        let out = rates.rates_from(current);
        let total: f64 = out.iter().map(|&(_, r)| r).sum();
        if total <= 0.0 {
            break;
        }
        t += rng.exponential(total);
        if t >= horizon {
            break;
        }
        let weights: Vec<f64> = out.iter().map(|&(_, r)| r).collect();
        let pick = rng.choose_weighted(&weights);
        current = out[pick].0;
        states.push(current);
        jump_times.push(t);
    }
    Trajectory {
        states,
        jump_times,
        horizon,
    }
}

/// Monte-Carlo Feynman-Kac estimate.
#[derive(Debug, Clone, Copy)]
pub struct FkEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub mean_jumps: f64,
}

/// Estimate E[exp(-∫(V - E0)dt)·terminal(s_T)] over passive trajectories
/// from `s0`. With the exact (φ0, E0) inserted this reproduces φ0(s0) at any
/// horizon.
pub fn fk_estimate(
    model: &StoquasticModel,
    s0: SpinConfig,
    horizon: f64,
    e0: f64,
    terminal_fn: &(impl Fn(SpinConfig) -> f64 + Sync),
    n_traj: usize,
    seed: u64,
) -> FkEstimate {
    let passive = PassiveRates(model);
    let results: Vec<(f64, f64)> = (0..n_traj)
        .into_par_iter()
        .map(|i| {
            let mut rng = Rng::for_stream(seed, i as u64);
            let traj = simulate_ctmc(&passive, s0, horizon, &mut rng);
            let mut exponent = 0.0;
            for (s, dur) in traj.segments() {
                exponent -= (model.potential(s) + FK_ENERGY_SHIFT_SIGN * e0) * dur;
            }
            (
                exponent.exp() * terminal_fn(traj.final_state()),
                traj.n_jumps() as f64,
            )
        })
        .collect();
    let weights: Vec<f64> = results.iter().map(|&(w, _)| w).collect();
    let jumps: Vec<f64> = results.iter().map(|&(_, j)| j).collect();
    let (mean, std_error) = mean_and_std_error(&weights);
    FkEstimate {
        mean,
        std_error,
        mean_jumps: pairwise_sum(&jumps) / n_traj.max(1) as f64,
    }
}

/// Relative-entropy rate between a parameterized row and the passive row:
/// Σ_{s'} [Γ - Γθ + Γθ·log(Γθ/Γ)]. Nonnegative, zero iff Γθ = Γ.
pub fn entropy_rate(
    theta_row: &[(SpinConfig, f64)],
    passive_row: &[(SpinConfig, f64)],
) -> Result<f64> {
    let mut total = 0.0;
    for &(_, gamma) in passive_row {
        total += gamma;
    }
    for &(s2, theta) in theta_row {
        if theta == 0.0 {
            continue;
        }
        let gamma = passive_row
            .iter()
            .find(|&&(p, _)| p == s2)
            .map(|&(_, g)| g)
            .unwrap_or(0.0);
        if gamma <= 0.0 {
            return Err(Error::SupportMismatch { rate: theta });
        }
        total += -theta + theta * (theta / gamma).ln();
    }
    Ok(total)
}

/// Monte-Carlo estimate of the maximum-entropy objective
/// R = -(1/T)·E[∫(V + H) dt] along trajectories of `theta`.
///
/// An initial stretch of length `burn_in` is simulated and discarded before
/// the averaging window of length `horizon`.
pub fn objective_estimate(
    model: &StoquasticModel,
    theta: &impl RateMap,
    horizon: f64,
    burn_in: f64,
    s0: SpinConfig,
    n_traj: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let total_t = burn_in + horizon;
    let per_traj: Vec<Result<f64>> = (0..n_traj)
        .into_par_iter()
        .map(|i| {
            let mut rng = Rng::for_stream(seed, i as u64);
            let traj = simulate_ctmc(theta, s0, total_t, &mut rng);
            let mut integral = 0.0;
            let mut t = 0.0;
            for (s, dur) in traj.segments() {
                let overlap = (t + dur).min(total_t) - t.max(burn_in);
                t += dur;
                if overlap <= 0.0 {
                    continue;
                }
                let h = entropy_rate(&theta.rates_from(s), &model.passive_rates(s))?;
                integral += (model.potential(s) + h) * overlap;
            }
            Ok(-integral / horizon)
        })
        .collect();
    let values: Vec<f64> = per_traj.into_iter().collect::<Result<_>>()?;
    Ok(mean_and_std_error(&values))
}

/// Importance-sampled Feynman-Kac estimate.
#[derive(Debug, Clone, Copy)]
pub struct ImportanceEstimate {
    pub mean: f64,
    pub std_error: f64,
    /// Var(w)/mean(w)² of the full path weights; zero at Γθ = Γ* with the
    /// matched terminal function.
    pub weight_rel_variance: f64,
    pub mean_jumps: f64,
}

/// Same expectation as [`fk_estimate`], sampled under `theta` and reweighted
/// by the path Radon-Nikodym factor
/// exp(Σ_jumps log(Γ/Γθ) + ∫(Γθ_tot - Γ_tot)dt). Unbiased whenever `theta`
/// is positive exactly where the passive rates are.
pub fn fk_importance_estimate(
    model: &StoquasticModel,
    theta: &impl RateMap,
    s0: SpinConfig,
    horizon: f64,
    e0: f64,
    terminal_fn: &(impl Fn(SpinConfig) -> f64 + Sync),
    n_traj: usize,
    seed: u64,
) -> Result<ImportanceEstimate> {
    let per_traj: Vec<Result<(f64, f64)>> = (0..n_traj)
        .into_par_iter()
        .map(|i| {
            let mut rng = Rng::for_stream(seed, i as u64);
            let traj = simulate_ctmc(theta, s0, horizon, &mut rng);
            let mut exponent = 0.0;
            for (s, dur) in traj.segments() {
                let theta_row = theta.rates_from(s);
                let passive_row = model.passive_rates(s);
                for &(s2, gamma) in &passive_row {
                    let th = theta_row
                        .iter()
                        .find(|&&(p, _)| p == s2)
                        .map(|&(_, r)| r)
                        .unwrap_or(0.0);
                    if gamma > 0.0 && th <= 0.0 {
                        return Err(Error::SupportMismatch { rate: th });
                    }
                }
                let theta_total: f64 = theta_row.iter().map(|&(_, r)| r).sum();
                let passive_total: f64 = passive_row.iter().map(|&(_, r)| r).sum();
                exponent += (theta_total - passive_total) * dur;
                exponent -= (model.potential(s) + FK_ENERGY_SHIFT_SIGN * e0) * dur;
            }
            for k in 0..traj.n_jumps() {
                let from = traj.states[k];
                let next = traj.states[k + 1];
                let gamma = model
                    .passive_rates(from)
                    .into_iter()
                    .find(|&(p, _)| p == next)
                    .map(|(_, g)| g)
                    .unwrap_or(0.0);
                let th = theta
                    .rates_from(from)
                    .into_iter()
                    .find(|&(p, _)| p == next)
                    .map(|(_, r)| r)
                    .unwrap_or(0.0);
                if gamma <= 0.0 || th <= 0.0 {
                    return Err(Error::SupportMismatch { rate: th });
                }
                exponent += (gamma / th).ln();
            }
            Ok((
                exponent.exp() * terminal_fn(traj.final_state()),
                traj.n_jumps() as f64,
            ))
        })
        .collect();
    let results: Vec<(f64, f64)> = per_traj.into_iter().collect::<Result<_>>()?;
    let weights: Vec<f64> = results.iter().map(|&(w, _)| w).collect();
    let jumps: Vec<f64> = results.iter().map(|&(_, j)| j).collect();
    let (mean, std_error) = mean_and_std_error(&weights);
    let (_, variance) = mean_and_variance(&weights);
    Ok(ImportanceEstimate {
        mean,
        std_error,
        weight_rel_variance: variance / (mean * mean),
        mean_jumps: pairwise_sum(&jumps) / n_traj.max(1) as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::ground_state_dense;
    use crate::hamiltonian::ModelKind;
    use crate::lattice::{Lattice, Sector};

    #[test]
    fn holding_times_are_exponential() {
        let s0 = SpinConfig::all_down(1);
        let s1 = SpinConfig::all_up(1);
        let toy = move |s: SpinConfig| {
            if s == s0 {
                vec![(s1, 2.0)]
            } else {
                vec![]
            }
        };
        let n = 50_000;
        let mut holds = Vec::with_capacity(n);
        for i in 0..n {
            let mut rng = Rng::for_stream(11, i as u64);
            let traj = simulate_ctmc(&toy, s0, 100.0, &mut rng);
            assert_eq!(traj.n_jumps(), 1);
            holds.push(traj.jump_times[0]);
        }
        let (mean, se) = mean_and_std_error(&holds);
        assert!((mean - 0.5).abs() < 3.0 * se, "mean hold {mean}");
    }

    #[test]
    fn jump_count_is_poisson_for_uniform_rates() {
        let lat = Lattice::ring(4).unwrap();
        let m = StoquasticModel::new(ModelKind::Ising { j: 1.0, h: 1.0 }, lat).unwrap();
        let passive = PassiveRates(&m);
        let n = 20_000;
        let counts: Vec<f64> = (0..n)
            .map(|i| {
                let mut rng = Rng::for_stream(5, i);
                simulate_ctmc(&passive, SpinConfig::all_up(4), 1.0, &mut rng).n_jumps() as f64
            })
            .collect();
        let (mean, se) = mean_and_std_error(&counts);
        // Total exit rate h·N = 4 at every state.
        assert!((mean - 4.0).abs() < 3.0 * se, "mean jumps {mean}");
    }

    #[test]
    fn absorbing_state_holds_to_horizon() {
        let dead = |_s: SpinConfig| Vec::new();
        let mut rng = Rng::new(1);
        let traj = simulate_ctmc(&dead, SpinConfig::all_up(3), 2.0, &mut rng);
        assert_eq!(traj.states.len(), 1);
        assert_eq!(traj.n_jumps(), 0);
        let total: f64 = traj.segments().map(|(_, d)| d).sum();
        assert_eq!(total, 2.0);
    }

    #[test]
    fn trajectory_moves_along_valid_transitions() {
        let lat = Lattice::ring(6).unwrap();
        let m = StoquasticModel::new(ModelKind::Ising { j: 0.5, h: 1.5 }, lat).unwrap();
        let passive = PassiveRates(&m);
        let mut rng = Rng::new(42);
        let traj = simulate_ctmc(&passive, SpinConfig::all_down(6), 5.0, &mut rng);
        for pair in traj.states.windows(2) {
            assert_eq!((pair[0].bits() ^ pair[1].bits()).count_ones(), 1);
        }
        for w in traj.jump_times.windows(2) {
            assert!(w[0] < w[1]);
        }
        assert!(traj.jump_times.iter().all(|&t| t < traj.horizon));
    }

    #[test]
    fn flat_potential_gives_deterministic_weight() {
        // XXX in a magnetization sector: V ≡ -J·B, so with the E0 term off
        // the weight is exp(J·B·T) on every path.
        let lat = Lattice::ring(4).unwrap();
        let m = StoquasticModel::new(ModelKind::Xxz { j: 1.0, j_perp: 1.0 }, lat).unwrap();
        let s0 = SpinConfig::parse("++--").unwrap();
        let est = fk_estimate(&m, s0, 0.7, 0.0, &|_| 1.0, 400, 3);
        let expect = (4.0 * 0.7f64).exp();
        assert!((est.mean - expect).abs() < 1e-12 * expect);
        // Deterministic integrand: variance at floating rounding level only.
        assert!(est.std_error < 1e-13 * expect);
    }

    #[test]
    fn zero_horizon_returns_terminal_value() {
        let lat = Lattice::open_chain(2).unwrap();
        let m = StoquasticModel::new(ModelKind::Ising { j: 1.0, h: 1.0 }, lat).unwrap();
        let s0 = SpinConfig::parse("+-").unwrap();
        let est = fk_estimate(&m, s0, 0.0, -1.0, &|s| s.bits() as f64 + 7.0, 10, 9);
        assert_eq!(est.mean, s0.bits() as f64 + 7.0);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn oracle_inputs_reproduce_ground_amplitude() {
        let lat = Lattice::open_chain(2).unwrap();
        let m = StoquasticModel::new(ModelKind::Ising { j: 1.0, h: 1.0 }, lat.clone()).unwrap();
        let space = StateSpace::new(&lat, Sector::Full, 20).unwrap();
        let gs = ground_state_dense(&m, &space).unwrap();
        let s0 = SpinConfig::parse("++").unwrap();
        let est = fk_estimate(
            &m,
            s0,
            1.0,
            gs.energy,
            &|s| gs.amplitude(&space, s),
            40_000,
            17,
        );
        let expect = gs.amplitude(&space, s0);
        assert!(
            (est.mean - expect).abs() < 3.0 * est.std_error,
            "estimate {} ± {} vs {}",
            est.mean,
            est.std_error,
            expect
        );
    }

    #[test]
    fn entropy_rate_cases() {
        let a = SpinConfig::all_up(2);
        let passive = vec![(a, 1.0)];
        // Γθ = Γ
        assert_eq!(entropy_rate(&passive, &passive).unwrap(), 0.0);
        // Γ=1, Γθ=2: 1 - 2 + 2 ln 2
        let doubled = vec![(a, 2.0)];
        let h = entropy_rate(&doubled, &passive).unwrap();
        assert!((h - (-1.0 + 2.0 * 2.0f64.ln())).abs() < 1e-14);
        // Γθ → 0 limit tends to Γ = 1.
        let tiny = vec![(a, 1e-12)];
        assert!((entropy_rate(&tiny, &passive).unwrap() - 1.0).abs() < 1e-9);
        // Support mismatch.
        let b = SpinConfig::all_down(2);
        let off_support = vec![(b, 0.5)];
        assert!(matches!(
            entropy_rate(&off_support, &passive),
            Err(Error::SupportMismatch { .. })
        ));
    }

    #[test]
    fn entropy_rate_nonnegative_on_random_rows() {
        let mut rng = Rng::new(99);
        let states: Vec<SpinConfig> = (0..4).map(|i| SpinConfig::from_bits(i, 3)).collect();
        for _ in 0..1000 {
            let passive: Vec<(SpinConfig, f64)> = states
                .iter()
                .map(|&s| (s, 0.05 + 3.0 * rng.uniform()))
                .collect();
            let theta: Vec<(SpinConfig, f64)> = states
                .iter()
                .map(|&s| (s, 0.05 + 3.0 * rng.uniform()))
                .collect();
            let h = entropy_rate(&theta, &passive).unwrap();
            assert!(h >= 0.0);
            assert!(entropy_rate(&passive, &passive).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn importance_with_passive_rates_matches_plain_estimator() {
        let lat = Lattice::ring(4).unwrap();
        let m = StoquasticModel::new(ModelKind::Ising { j: 1.0, h: 1.0 }, lat).unwrap();
        let s0 = SpinConfig::all_up(4);
        let plain = fk_estimate(&m, s0, 0.8, -2.0, &|_| 1.0, 5_000, 21);
        let passive = PassiveRates(&m);
        let is = fk_importance_estimate(&m, &passive, s0, 0.8, -2.0, &|_| 1.0, 5_000, 21).unwrap();
        assert_eq!(is.mean, plain.mean);
        assert_eq!(is.std_error, plain.std_error);
    }

    #[test]
    fn doob_rates_give_zero_variance() {
        let lat = Lattice::open_chain(2).unwrap();
        let m = StoquasticModel::new(ModelKind::Ising { j: 1.0, h: 1.0 }, lat.clone()).unwrap();
        let space = StateSpace::new(&lat, Sector::Full, 20).unwrap();
        let gs = ground_state_dense(&m, &space).unwrap();
        let doob = DoobRates::from_amplitudes(&m, &space, &gs.amplitudes).unwrap();
        let s0 = SpinConfig::parse("+-").unwrap();
        let est = fk_importance_estimate(
            &m,
            &doob,
            s0,
            1.0,
            gs.energy,
            &|s| gs.amplitude(&space, s),
            2_000,
            33,
        )
        .unwrap();
        assert!(
            est.weight_rel_variance < 1e-10,
            "relative weight variance {}",
            est.weight_rel_variance
        );
        let expect = gs.amplitude(&space, s0);
        assert!((est.mean - expect).abs() < 1e-6 * expect);
    }

    #[test]
    fn importance_sampling_is_unbiased_under_scaled_rates() {
        let lat = Lattice::open_chain(2).unwrap();
        let m = StoquasticModel::new(ModelKind::Ising { j: 1.0, h: 1.0 }, lat).unwrap();
        let s0 = SpinConfig::parse("++").unwrap();
        let plain = fk_estimate(&m, s0, 1.0, -2.0, &|_| 1.0, 40_000, 55);
        let scaled = {
            let m = m.clone();
            move |s: SpinConfig| {
                m.passive_rates(s)
                    .into_iter()
                    .map(|(s2, r)| (s2, 1.5 * r))
                    .collect::<Vec<_>>()
            }
        };
        let is = fk_importance_estimate(&m, &scaled, s0, 1.0, -2.0, &|_| 1.0, 40_000, 56).unwrap();
        let sigma = (plain.std_error.powi(2) + is.std_error.powi(2)).sqrt();
        assert!(
            (is.mean - plain.mean).abs() < 3.0 * sigma,
            "importance {} ± {} vs plain {} ± {}",
            is.mean,
            is.std_error,
            plain.mean,
            plain.std_error
        );
    }

    #[test]
    fn objective_on_flat_potential_is_exact() {
        let lat = Lattice::ring(4).unwrap();
        let m = StoquasticModel::new(ModelKind::Xxz { j: 1.0, j_perp: 1.0 }, lat).unwrap();
        let passive = PassiveRates(&m);
        let s0 = SpinConfig::parse("+-+-").unwrap();
        let (value, se) = objective_estimate(&m, &passive, 20.0, 0.0, s0, 16, 77).unwrap();
        // H = 0 under the passive dynamics and V ≡ -4.
        assert!(se < 1e-12);
        assert!((value - 4.0).abs() < 1e-10);
    }

    #[test]
    fn optimal_rates_objective_attains_minus_e0() {
        let lat = Lattice::ring(4).unwrap();
        let m = StoquasticModel::new(ModelKind::Ising { j: 1.0, h: 1.0 }, lat.clone()).unwrap();
        let space = StateSpace::new(&lat, Sector::Full, 20).unwrap();
        let gs = ground_state_dense(&m, &space).unwrap();
        let doob = DoobRates::from_amplitudes(&m, &space, &gs.amplitudes).unwrap();
        let s0 = SpinConfig::all_up(4);
        let (value, se) = objective_estimate(&m, &doob, 200.0, 10.0, s0, 24, 101).unwrap();
        assert!(
            (value + gs.energy).abs() < 3.0 * se.max(1e-3),
            "objective {value} ± {se} vs -E0 = {}",
            -gs.energy
        );

        // The passive dynamics scores no better than the optimum.
        let passive = PassiveRates(&m);
        let (passive_value, passive_se) =
            objective_estimate(&m, &passive, 200.0, 10.0, s0, 24, 102).unwrap();
        assert!(passive_value <= -gs.energy + 3.0 * passive_se);
    }
}
