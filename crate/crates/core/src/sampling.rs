//! Metropolis-Hastings sampling of φ² with uniform and Q-guided flip
//! proposals, Monte-Carlo variational energy, and autocorrelation times.
//!
//! Q-guided proposals are asymmetric, so the acceptance ratio always carries
//! the Hastings correction; forward and reverse proposal probabilities are
//! computed exactly. Multi-flip proposals draw k distinct sites sequentially
//! without replacement from softmax(Q); both directions evaluate the
//! probability of the same sampled ordering, an auxiliary-variable scheme
//! that preserves φ² exactly.

use crate::error::{Error, Result};
use crate::exact::local_energy;
use crate::hamiltonian::StoquasticModel;
use crate::lattice::SpinConfig;
use crate::numeric::{log_sum_exp, mean_and_std_error, pairwise_sum};
use crate::rng::Rng;
use std::collections::HashMap;

/// Provider of the sampling target: log amplitudes, plus per-site flip
/// logits for Q-guided proposals (uniform by default).
pub trait SampleTarget: Sync {
    fn log_phi(&self, s: SpinConfig) -> f64;

    /// Q(s, Flip(i)) for every site; constant by default, which makes the
    /// Q-guided proposals coincide with uniform ones.
    fn flip_logits(&self, s: SpinConfig) -> Vec<f64> {
        vec![0.0; s.n_sites()]
    }

    /// Batched log amplitudes; override when batching is cheaper.
    fn log_phi_batch(&self, states: &[SpinConfig]) -> Vec<f64> {
        states.iter().map(|&s| self.log_phi(s)).collect()
    }
}

/// Tabulated target over an enumerated sector, for exact wavefunctions.
pub struct TableTarget<'a> {
    pub space: &'a crate::lattice::StateSpace,
    pub log_phi: Vec<f64>,
}

impl<'a> TableTarget<'a> {
    pub fn from_amplitudes(space: &'a crate::lattice::StateSpace, amps: &[f64]) -> Self {
        Self {
            space,
            log_phi: amps.iter().map(|a| a.ln()).collect(),
        }
    }
}

impl SampleTarget for TableTarget<'_> {
    fn log_phi(&self, s: SpinConfig) -> f64 {
        self.log_phi[self.space.index_of(s).expect("state outside sector")]
    }
}

/// Proposal family for one MH step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Proposal {
    /// One site uniformly at random, flipped.
    UniformSingleFlip,
    /// One site drawn from softmax Q(s, ·), flipped.
    QSingleFlip,
    /// k distinct sites drawn without replacement from softmax Q(s, ·),
    /// flipped together.
    QMultiFlip(usize),
}

impl Proposal {
    fn validate(&self, n_sites: usize) -> Result<()> {
        if let Proposal::QMultiFlip(k) = *self {
            if k == 0 || k > n_sites {
                return Err(Error::InvalidAction(format!(
                    "multi-flip count {k} out of range for {n_sites} sites"
                )));
            }
        }
        Ok(())
    }
}

/// Current chain position with cached target evaluations.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub config: SpinConfig,
    pub log_phi: f64,
    logits: Option<Vec<f64>>,
}

impl ChainState {
    pub fn new(target: &impl SampleTarget, config: SpinConfig) -> Self {
        Self {
            config,
            log_phi: target.log_phi(config),
            logits: None,
        }
    }

    fn logits<'a>(&'a mut self, target: &impl SampleTarget) -> &'a [f64] {
        if self.logits.is_none() {
            self.logits = Some(target.flip_logits(self.config));
        }
        self.logits.as_deref().unwrap()
    }
}

/// log-probability of drawing `sites` in order, without replacement, from
/// softmax(logits).
fn log_ordered_tuple_prob(logits: &[f64], sites: &[usize]) -> f64 {
    let mut masked: Vec<f64> = logits.to_vec();
    let mut logp = 0.0;
    for &site in sites {
        logp += masked[site] - log_sum_exp(&masked);
        masked[site] = f64::NEG_INFINITY;
    }
    logp
}

/// Draw `k` distinct sites without replacement from softmax(logits).
fn sample_ordered_tuple(logits: &[f64], k: usize, rng: &mut Rng) -> Vec<usize> {
    let mut masked: Vec<f64> = logits.to_vec();
    let mut sites = Vec::with_capacity(k);
    for _ in 0..k {
        let m = masked.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = masked.iter().map(|&x| (x - m).exp()).collect();
        let site = rng.choose_weighted(&weights);
        sites.push(site);
        masked[site] = f64::NEG_INFINITY;
    }
    sites
}

fn flip_all(config: SpinConfig, sites: &[usize]) -> SpinConfig {
    let mut c = config;
    for &site in sites {
        c = c.with_flip(site);
    }
    c
}

/// One Metropolis-Hastings step targeting φ². Returns whether the proposal
/// was accepted; on rejection the state is unchanged.
pub fn mh_step(
    target: &impl SampleTarget,
    proposal: Proposal,
    state: &mut ChainState,
    rng: &mut Rng,
) -> bool {
    let n = state.config.n_sites();
    debug_assert!(proposal.validate(n).is_ok());
    let (candidate, log_q_fwd, log_q_rev, cand_logits) = match proposal {
        Proposal::UniformSingleFlip => {
            let site = rng.below(n);
            let cand = state.config.with_flip(site);
            (cand, 0.0, 0.0, None)
        }
        Proposal::QSingleFlip => {
            let logits = state.logits(target).to_vec();
            let sites = sample_ordered_tuple(&logits, 1, rng);
            let cand = flip_all(state.config, &sites);
            let fwd = log_ordered_tuple_prob(&logits, &sites);
            let cand_logits = target.flip_logits(cand);
            let rev = log_ordered_tuple_prob(&cand_logits, &sites);
            (cand, fwd, rev, Some(cand_logits))
        }
        Proposal::QMultiFlip(k) => {
            let logits = state.logits(target).to_vec();
            let sites = sample_ordered_tuple(&logits, k, rng);
            let cand = flip_all(state.config, &sites);
            let fwd = log_ordered_tuple_prob(&logits, &sites);
            let cand_logits = target.flip_logits(cand);
            let rev = log_ordered_tuple_prob(&cand_logits, &sites);
            (cand, fwd, rev, Some(cand_logits))
        }
    };
    let cand_log_phi = target.log_phi(candidate);
    let log_alpha = 2.0 * (cand_log_phi - state.log_phi) + log_q_rev - log_q_fwd;
    let accept = log_alpha >= 0.0 || rng.uniform_pos().ln() < log_alpha;
    if accept {
        state.config = candidate;
        state.log_phi = cand_log_phi;
        state.logits = cand_logits;
    }
    accept
}

/// Every proposal outcome from `s` with its forward and reverse proposal
/// probabilities, for explicit detailed-balance checks. Multi-flip outcomes
/// are enumerated per ordered tuple.
pub fn enumerate_proposals(
    target: &impl SampleTarget,
    proposal: Proposal,
    s: SpinConfig,
) -> Vec<(SpinConfig, f64, f64)> {
    let n = s.n_sites();
    match proposal {
        Proposal::UniformSingleFlip => (0..n)
            .map(|site| (s.with_flip(site), 1.0 / n as f64, 1.0 / n as f64))
            .collect(),
        Proposal::QSingleFlip => {
            let logits = target.flip_logits(s);
            (0..n)
                .map(|site| {
                    let cand = s.with_flip(site);
                    let fwd = log_ordered_tuple_prob(&logits, &[site]).exp();
                    let rev =
                        log_ordered_tuple_prob(&target.flip_logits(cand), &[site]).exp();
                    (cand, fwd, rev)
                })
                .collect()
        }
        Proposal::QMultiFlip(k) => {
            let logits = target.flip_logits(s);
            let mut out = Vec::new();
            let mut tuple = Vec::with_capacity(k);
            enumerate_tuples(n, k, &mut tuple, &mut |sites| {
                let cand = flip_all(s, sites);
                let fwd = log_ordered_tuple_prob(&logits, sites).exp();
                let rev = log_ordered_tuple_prob(&target.flip_logits(cand), sites).exp();
                out.push((cand, fwd, rev));
            });
            out
        }
    }
}

fn enumerate_tuples(
    n: usize,
    k: usize,
    tuple: &mut Vec<usize>,
    visit: &mut impl FnMut(&[usize]),
) {
    if tuple.len() == k {
        visit(tuple);
        return;
    }
    for site in 0..n {
        if !tuple.contains(&site) {
            tuple.push(site);
            enumerate_tuples(n, k, tuple, visit);
            tuple.pop();
        }
    }
}

/// Summary of one MH run.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ChainStats {
    pub samples: usize,
    pub acceptance_rate: f64,
    /// Exponential autocorrelation time of the potential-energy series.
    pub tau: f64,
    /// Integrated autocorrelation time (inflates the error bar).
    pub tau_int: f64,
    pub std_error: f64,
    pub tau_flagged_zero: bool,
}

/// Recorded post-burn-in chain positions.
pub struct ChainSamples {
    pub states: Vec<SpinConfig>,
    pub acceptance_rate: f64,
}

/// Run an MH chain, recording the position after every post-burn-in step
/// (rejections repeat the current state).
pub fn sample_chain(
    target: &impl SampleTarget,
    proposal: Proposal,
    s0: SpinConfig,
    n_steps: usize,
    burn_in: usize,
    seed: u64,
) -> Result<ChainSamples> {
    proposal.validate(s0.n_sites())?;
    if n_steps <= burn_in {
        return Err(Error::DegenerateSeries(format!(
            "n_steps {n_steps} must exceed burn_in {burn_in}"
        )));
    }
    let mut rng = Rng::for_substream(seed, "mh-chain");
    let mut state = ChainState::new(target, s0);
    let mut accepted = 0usize;
    for _ in 0..burn_in {
        if mh_step(target, proposal, &mut state, &mut rng) {
            accepted += 1;
        }
    }
    let kept = n_steps - burn_in;
    let mut states: Vec<SpinConfig> = Vec::with_capacity(kept);
    for _ in 0..kept {
        if mh_step(target, proposal, &mut state, &mut rng) {
            accepted += 1;
        }
        states.push(state.config);
    }
    if accepted == 0 {
        return Err(Error::SamplerStuck { steps: n_steps });
    }
    Ok(ChainSamples {
        states,
        acceptance_rate: accepted as f64 / n_steps as f64,
    })
}

/// Local-energy statistics of recorded chain positions: the variational
/// energy with a τ-inflated error bar.
pub fn chain_energy_statistics(
    model: &StoquasticModel,
    target: &impl SampleTarget,
    samples: &ChainSamples,
) -> Result<(f64, ChainStats)> {
    let recorded = &samples.states;
    // Local energies per distinct visited state, amplitudes batched.
    let mut unique: Vec<SpinConfig> = recorded.clone();
    unique.sort_unstable();
    unique.dedup();
    let mut wanted: Vec<SpinConfig> = Vec::new();
    for &s in &unique {
        wanted.push(s);
        for (s2, _) in model.offdiag_row(s) {
            wanted.push(s2);
        }
    }
    let log_phis = target.log_phi_batch(&wanted);
    let lookup: HashMap<SpinConfig, f64> = wanted.into_iter().zip(log_phis).collect();
    let e_loc_by_state: HashMap<SpinConfig, f64> = unique
        .iter()
        .map(|&s| {
            let e = local_energy(model, |c| (lookup[&c] - lookup[&s]).exp(), s)
                .expect("positive amplitude");
            (s, e)
        })
        .collect();

    let energies: Vec<f64> = recorded.iter().map(|s| e_loc_by_state[s]).collect();
    let potentials: Vec<f64> = recorded.iter().map(|&s| model.potential(s)).collect();
    let tau_est = match autocorrelation_time(&potentials) {
        Ok(t) => t,
        // A constant series (e.g. an eigenstate target on a flat-V model)
        // carries no autocorrelation information.
        Err(Error::DegenerateSeries(_)) => TauEstimate {
            tau: 0.0,
            tau_int: 0.0,
            flagged_zero: true,
        },
        Err(e) => return Err(e),
    };
    let (mean, naive_se) = mean_and_std_error(&energies);
    let inflation = (1.0 + 2.0 * tau_est.tau_int).sqrt();
    let stats = ChainStats {
        samples: recorded.len(),
        acceptance_rate: samples.acceptance_rate,
        tau: tau_est.tau,
        tau_int: tau_est.tau_int,
        std_error: naive_se * inflation,
        tau_flagged_zero: tau_est.flagged_zero,
    };
    Ok((mean, stats))
}

/// Monte-Carlo variational energy: mean local energy over the post-burn-in
/// chain, with the error bar inflated by the measured autocorrelation.
pub fn variational_energy_mc(
    model: &StoquasticModel,
    target: &impl SampleTarget,
    proposal: Proposal,
    s0: SpinConfig,
    n_steps: usize,
    burn_in: usize,
    seed: u64,
) -> Result<(f64, ChainStats)> {
    let samples = sample_chain(target, proposal, s0, n_steps, burn_in, seed)?;
    chain_energy_statistics(model, target, &samples)
}

/// Autocorrelation time estimates of a scalar series.
#[derive(Debug, Clone, Copy)]
pub struct TauEstimate {
    /// From a least-squares fit of log ACF(t) = -t/τ over lags with ACF > 0.05.
    pub tau: f64,
    /// Integrated time Σ_t ACF(t) over the same window.
    pub tau_int: f64,
    /// Set when the ACF at lag 1 is non-positive (τ reported as 0).
    pub flagged_zero: bool,
}

/// Fit the exponential autocorrelation time of a series. The integrated
/// time over the same lag window is reported alongside as a cross-estimate.
pub fn autocorrelation_time(series: &[f64]) -> Result<TauEstimate> {
    let n = series.len();
    if n < 4 {
        return Err(Error::DegenerateSeries(format!("series length {n} < 4")));
    }
    let mean = pairwise_sum(series) / n as f64;
    let centered: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let c0 = centered.iter().map(|x| x * x).sum::<f64>() / n as f64;
    if c0 <= 0.0 || !c0.is_finite() {
        return Err(Error::DegenerateSeries(
            "series is constant; autocorrelation undefined".into(),
        ));
    }
    let acf = |lag: usize| -> f64 {
        let m = n - lag;
        let c: f64 = (0..m).map(|i| centered[i] * centered[i + lag]).sum::<f64>() / m as f64;
        c / c0
    };
    if acf(1) <= 0.0 {
        return Ok(TauEstimate {
            tau: 0.0,
            tau_int: 0.0,
            flagged_zero: true,
        });
    }
    let max_lag = n / 4;
    let mut fit_lags: Vec<(f64, f64)> = Vec::new();
    let mut tau_int = 0.0;
    for lag in 1..=max_lag {
        let rho = acf(lag);
        if rho <= 0.05 {
            break;
        }
        fit_lags.push((lag as f64, rho.ln()));
        tau_int += rho;
    }
    if fit_lags.is_empty() {
        return Ok(TauEstimate {
            tau: 0.0,
            tau_int: 0.0,
            flagged_zero: false,
        });
    }
    let num: f64 = fit_lags.iter().map(|&(t, l)| t * l).sum();
    let den: f64 = fit_lags.iter().map(|&(t, _)| t * t).sum();
    let slope = num / den;
    let tau = if slope < 0.0 { -1.0 / slope } else { f64::INFINITY };
    Ok(TauEstimate {
        tau,
        tau_int,
        flagged_zero: false,
    })
}
