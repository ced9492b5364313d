//! The soft Q-learning training loop.
//!
//! Each episode: one batch of experiences is generated by batch-many
//! persistent walkers stepping once under the current soft policy
//! π(a|s) ∝ p(a|s)·exp Q(s,a), pushed to the replay buffer; one batch is
//! sampled back; one Adam step is taken. The target network refreshes every
//! `target_update_interval` episodes. Every `validation_interval` episodes
//! the variational energy of the implied wavefunction is measured
//! (Metropolis-Hastings estimate, or an exact sum on enumerable lattices)
//! and the energy estimate entering rewards and the a0 closure is updated.
//!
//! Warm-up fills the buffer completely with uniform-policy experiences
//! before any gradient step; walkers start from configurations with half
//! the sites spin-up.

use crate::adam::{adam_step, AdamState};
use crate::error::{NeuralError, Result};
use crate::loss::{bellman_loss_and_grads, QLearningProblem, TrainFormulation};
use crate::net::{NetGrads, QNetwork};
use crate::replay::{Experience, ReplayBuffer};
use std::sync::Mutex;
use stoqrl_core::exact::variational_energy_exact;
use stoqrl_core::lattice::{apply_action, Sector, SpinConfig, StateSpace};
use stoqrl_core::rng::Rng;
use stoqrl_core::sampling::{variational_energy_mc, Proposal, SampleTarget};
use stoqrl_core::StoquasticModel;

/// How the periodic energy validation is computed.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Validation {
    /// Metropolis-Hastings chain of `steps` proposals after `burn_in`
    /// (0 = the default of 10·N sweeps).
    MonteCarlo { steps: usize, burn_in: usize },
    /// Exact sum over the full state space (lattices of ≤ `cap` sites).
    Exact { cap: usize },
}

/// Training hyperparameters. Full-scale defaults: Adam at
/// 1e-3 decaying ×0.99 every 10 episodes, batch 4096, buffer 65536, target
/// refresh and validation every 20 episodes, 3 hidden layers of 64 channels.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub formulation: TrainFormulation,
    pub episodes: usize,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub hidden_layers: usize,
    pub channels: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub lr_decay_interval: usize,
    pub target_update_interval: usize,
    pub validation_interval: usize,
    pub validation: Validation,
    pub seed: u64,
}

impl TrainConfig {
    pub fn full_scale_defaults(formulation: TrainFormulation) -> Self {
        Self {
            formulation,
            episodes: 4500,
            batch_size: 4096,
            buffer_capacity: 65536,
            hidden_layers: 3,
            channels: 64,
            learning_rate: 1e-3,
            lr_decay: 0.99,
            lr_decay_interval: 10,
            target_update_interval: 20,
            validation_interval: 20,
            validation: Validation::MonteCarlo {
                steps: 2048,
                burn_in: 0,
            },
            seed: 0,
        }
    }

    /// Scaled-down settings for desk-sized lattices.
    pub fn desk_defaults(formulation: TrainFormulation) -> Self {
        Self {
            batch_size: 512,
            buffer_capacity: 8192,
            ..Self::full_scale_defaults(formulation)
        }
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.batch_size > self.buffer_capacity {
            return Err(NeuralError::Unsupported(format!(
                "batch size {} incompatible with buffer capacity {}",
                self.batch_size, self.buffer_capacity
            )));
        }
        if !(self.learning_rate > 0.0 && self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(NeuralError::Unsupported("bad learning-rate schedule".into()));
        }
        if self.lr_decay_interval == 0
            || self.target_update_interval == 0
            || self.validation_interval == 0
        {
            return Err(NeuralError::Unsupported("intervals must be positive".into()));
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub loss: f64,
    /// Set on validation episodes.
    pub e_var: Option<f64>,
    pub e_var_std_error: Option<f64>,
    pub e0_estimate: f64,
    pub learning_rate: f64,
}

/// Sampling adapter exposing the network-implied wavefunction to the
/// Metropolis machinery: log φ from one forward pass, flip logits = Q row.
/// A two-slot cache avoids the double forward per proposal.
pub struct NetTarget<'a> {
    problem: &'a QLearningProblem,
    net: &'a QNetwork,
    e0_est: f64,
    cache: Mutex<Vec<(u64, Vec<f64>)>>,
}

impl<'a> NetTarget<'a> {
    pub fn new(problem: &'a QLearningProblem, net: &'a QNetwork, e0_est: f64) -> Self {
        Self {
            problem,
            net,
            e0_est,
            cache: Mutex::new(Vec::with_capacity(2)),
        }
    }

    fn row(&self, s: SpinConfig) -> Vec<f64> {
        let key = s.bits();
        {
            let cache = self.cache.lock().unwrap();
            if let Some((_, row)) = cache.iter().find(|(k, _)| *k == key) {
                return row.clone();
            }
        }
        let row = self.net.forward(s);
        let mut cache = self.cache.lock().unwrap();
        if cache.len() >= 2 {
            cache.remove(0);
        }
        cache.push((key, row.clone()));
        row
    }
}

impl SampleTarget for NetTarget<'_> {
    fn log_phi(&self, s: SpinConfig) -> f64 {
        self.problem.log_phi(s, &self.row(s), self.e0_est)
    }

    fn flip_logits(&self, s: SpinConfig) -> Vec<f64> {
        self.row(s)
    }

    fn log_phi_batch(&self, states: &[SpinConfig]) -> Vec<f64> {
        let rows = self.net.forward_batch(states);
        states
            .iter()
            .zip(rows)
            .map(|(&s, row)| self.problem.log_phi(s, &row, self.e0_est))
            .collect()
    }
}

/// Resumable training state.
pub struct Trainer {
    pub config: TrainConfig,
    problem: QLearningProblem,
    pub net: QNetwork,
    target: QNetwork,
    buffer: ReplayBuffer,
    walkers: Vec<SpinConfig>,
    adam: AdamState,
    grads: NetGrads,
    episode: usize,
    e0_est: f64,
    env_rng: Rng,
    replay_rng: Rng,
    log: Vec<EpisodeRecord>,
    space_cache: Option<StateSpace>,
}

/// Configuration with half the sites up, uniformly at random.
pub fn half_filled_config(n_sites: usize, rng: &mut Rng) -> SpinConfig {
    let mut sites: Vec<usize> = (0..n_sites).collect();
    for k in 0..n_sites / 2 {
        let pick = k + rng.below(n_sites - k);
        sites.swap(k, pick);
    }
    let mut bits = 0u64;
    for &site in &sites[..n_sites / 2] {
        bits |= 1 << site;
    }
    SpinConfig::from_bits(bits, n_sites)
}

impl Trainer {
    pub fn new(model: StoquasticModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let problem = QLearningProblem::new(model, config.formulation)?;
        let net = QNetwork::new(
            problem.model().lattice(),
            config.hidden_layers,
            config.channels,
            config.seed,
        )?;
        let target = net.clone();
        let mut env_rng = Rng::for_substream(config.seed, "train-env");
        let walkers: Vec<SpinConfig> = (0..config.batch_size)
            .map(|_| half_filled_config(problem.n_sites(), &mut env_rng))
            .collect();
        let buffer = ReplayBuffer::new(config.buffer_capacity);
        let adam = AdamState::new(&net);
        let grads = net.zero_grads();
        let e0_est = problem.initial_e0_estimate();
        let replay_rng = Rng::for_substream(config.seed, "train-replay");
        Ok(Self {
            config,
            problem,
            net,
            target,
            buffer,
            walkers,
            adam,
            grads,
            episode: 0,
            e0_est,
            env_rng,
            replay_rng,
            log: Vec::new(),
            space_cache: None,
        })
    }

    pub fn problem(&self) -> &QLearningProblem {
        &self.problem
    }

    pub fn episode(&self) -> usize {
        self.episode
    }

    pub fn e0_estimate(&self) -> f64 {
        self.e0_est
    }

    pub fn log(&self) -> &[EpisodeRecord] {
        &self.log
    }

    fn current_lr(&self) -> f64 {
        let decays = (self.episode / self.config.lr_decay_interval) as i32;
        self.config.learning_rate * self.config.lr_decay.powi(decays)
    }

    /// One batch of walker steps pushed to the buffer. Uniform policy during
    /// warm-up, the soft policy afterwards.
    fn generate_batch(&mut self, uniform: bool) {
        let rows = self.net.forward_batch(&self.walkers);
        for (walker, row) in self.walkers.iter_mut().zip(rows) {
            let s = *walker;
            let (actions, logits) = self.problem.behavior_logits(s, &row, self.e0_est);
            let pick = if uniform {
                self.env_rng.below(actions.len())
            } else {
                let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let weights: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
                self.env_rng.choose_weighted(&weights)
            };
            let action = actions[pick];
            let next = apply_action(s, action).expect("behavior actions are valid");
            self.buffer.push(Experience {
                state: s,
                action,
                reward: self.problem.reward(s, self.e0_est),
                next,
                terminal: self.problem.is_terminal_state(next),
            });
            *walker = next;
        }
    }

    /// Fill the buffer completely with uniform-policy experiences.
    pub fn warm_up(&mut self) {
        while !self.buffer.is_full() {
            self.generate_batch(true);
        }
    }

    /// Measure the variational energy of the current wavefunction and
    /// refresh the energy estimate feeding rewards and the a0 closure.
    pub fn validate(&mut self) -> Result<(f64, Option<f64>)> {
        let (e_var, std_error) = match self.config.validation {
            Validation::Exact { cap } => {
                if self.space_cache.is_none() {
                    self.space_cache = Some(StateSpace::new(
                        self.problem.model().lattice(),
                        Sector::Full,
                        cap,
                    )?);
                }
                let space = self.space_cache.as_ref().unwrap();
                let target = NetTarget::new(&self.problem, &self.net, self.e0_est);
                let log_phis = target.log_phi_batch(space.states());
                let max = log_phis.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e = variational_energy_exact(self.problem.model(), space, |s| {
                    (log_phis[space.index_of(s).unwrap()] - max).exp()
                })?;
                (e, None)
            }
            Validation::MonteCarlo { steps, burn_in } => {
                let n = self.problem.n_sites();
                let burn = if burn_in == 0 { 10 * n * n } else { burn_in };
                let target = NetTarget::new(&self.problem, &self.net, self.e0_est);
                let s0 = self.walkers[0];
                let (e, stats) = variational_energy_mc(
                    self.problem.model(),
                    &target,
                    Proposal::UniformSingleFlip,
                    s0,
                    burn + steps,
                    burn,
                    self.config.seed ^ (0x5a5a + self.episode as u64),
                )?;
                (e, Some(stats.std_error))
            }
        };
        // Keep the estimate strictly below every diagonal element so the
        // terminal reward and the a0 closure stay defined.
        let guard = self.problem.classical_min_diag()
            - 1e-6 * (1.0 + self.problem.classical_min_diag().abs());
        self.e0_est = e_var.min(guard);
        Ok((e_var, std_error))
    }

    /// Run `n` further episodes (warm-up runs first if the buffer is not
    /// yet full).
    pub fn train_episodes(&mut self, n: usize) -> Result<()> {
        if !self.buffer.is_full() {
            self.warm_up();
        }
        for _ in 0..n {
            self.episode += 1;
            let lr = self.current_lr();
            self.generate_batch(false);
            let batch = self.buffer.sample(self.config.batch_size, &mut self.replay_rng);
            let report = bellman_loss_and_grads(
                &self.problem,
                &self.net,
                &self.target,
                &batch,
                self.e0_est,
                &mut self.grads,
            )?;
            if !report.loss.is_finite() {
                return Err(NeuralError::Diverged {
                    episode: self.episode,
                    loss: report.loss,
                });
            }
            adam_step(&mut self.net, &self.grads, &mut self.adam, lr);
            if self.episode % self.config.target_update_interval == 0 {
                self.target = self.net.clone();
            }
            let mut e_var = None;
            let mut e_var_se = None;
            if self.episode % self.config.validation_interval == 0 {
                let (e, se) = self.validate()?;
                e_var = Some(e);
                e_var_se = se;
            }
            self.log.push(EpisodeRecord {
                episode: self.episode,
                loss: report.loss,
                e_var,
                e_var_std_error: e_var_se,
                e0_estimate: self.e0_est,
                learning_rate: lr,
            });
        }
        Ok(())
    }
}

/// Train to completion per the config; returns the network and the log.
pub fn train_soft_q(
    model: StoquasticModel,
    config: TrainConfig,
) -> Result<(QNetwork, Vec<EpisodeRecord>)> {
    let episodes = config.episodes;
    let mut trainer = Trainer::new(model, config)?;
    trainer.train_episodes(episodes)?;
    let Trainer { net, log, .. } = trainer;
    Ok((net, log))
}
