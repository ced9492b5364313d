//! Subcommand implementations. Every command returns a JSON value holding
//! the fully resolved configuration next to its results.

use crate::args::{parse_config_list, ModelArgs};
use crate::CliError;
use anyhow::{anyhow, Context};
use serde_json::json;
use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;
use stoqrl_core::exact::{ground_state_dense, variational_energy_exact};
use stoqrl_core::fk::{fk_estimate, fk_importance_estimate, DoobRates};
use stoqrl_core::lattice::{Sector, SpinConfig, StateSpace};
use stoqrl_core::mdp::{solve_tabular, solve_terminal_self_consistent, Formulation};
use stoqrl_core::rng::Rng;
use stoqrl_core::sampling::{chain_energy_statistics, sample_chain, Proposal};
use stoqrl_core::{ModelKind, StoquasticModel};
use stoqrl_neural::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use stoqrl_neural::train::{half_filled_config, NetTarget};
use stoqrl_neural::{QLearningProblem, TrainConfig, TrainFormulation, Trainer, Validation};

const STATE_DUMP_CAP: usize = 1 << 14;

fn cfg<T, E: Into<anyhow::Error>>(r: Result<T, E>) -> Result<T, CliError> {
    r.map_err(|e| CliError::Config(e.into()))
}

fn run<T, E: Into<anyhow::Error>>(r: Result<T, E>) -> Result<T, CliError> {
    r.map_err(|e| CliError::Runtime(e.into()))
}

pub fn validate(model_args: &ModelArgs, cap: usize) -> Result<serde_json::Value, CliError> {
    let (model, sector, resolved) = cfg(model_args.build())?;
    let space = cfg(StateSpace::new(model.lattice(), sector, cap))?;
    let gs = run(ground_state_dense(&model, &space))?;
    Ok(json!({
        "schema": 1,
        "command": "validate",
        "config": { "model": resolved, "enumeration_cap": cap },
        "result": {
            "e0": gs.energy,
            "e0_per_site": gs.energy / model.n_sites() as f64,
            "residual": gs.residual_inf,
            "iterations": gs.iterations,
            "n_states": space.len(),
        },
    }))
}

#[allow(clippy::too_many_arguments)]
pub fn solve(
    model_args: &ModelArgs,
    formulation: &str,
    dt: f64,
    shift: Option<f64>,
    e0: Option<f64>,
    terminal: Option<&str>,
    tol: f64,
    max_sweeps: usize,
    dump_states: bool,
    cap: usize,
) -> Result<serde_json::Value, CliError> {
    let (model, sector, resolved) = cfg(model_args.build())?;
    let space = cfg(StateSpace::new(model.lattice(), sector, cap))?;

    let (label, table, e0_out) = match formulation {
        "fk" => {
            let f = Formulation::ContinuousFk { dt };
            let table = run(solve_tabular(&f, &model, &space, tol, max_sweeps))?;
            let e = table.energy_estimate(&f).unwrap();
            ("fk", table, e)
        }
        "infinite" => {
            let c = shift.unwrap_or_else(|| model.max_diag(&space) + 1.0);
            let f = Formulation::DiscreteInfinite { shift: c };
            let table = run(solve_tabular(&f, &model, &space, tol, max_sweeps))?;
            let e = table.energy_estimate(&f).unwrap();
            ("infinite", table, e)
        }
        "terminal" => {
            let terminals = match terminal {
                Some(text) => cfg(parse_config_list(text))?,
                None => default_terminals(&model, sector, &space),
            };
            match e0 {
                Some(e0_given) => {
                    let f = Formulation::DiscreteTerminal {
                        terminals,
                        e0: e0_given,
                    };
                    let table = run(solve_tabular(&f, &model, &space, tol, max_sweeps))?;
                    ("terminal", table, e0_given)
                }
                None => {
                    let (table, e) = run(solve_terminal_self_consistent(
                        &model, &space, terminals, tol, max_sweeps,
                    ))?;
                    ("terminal", table, e)
                }
            }
        }
        other => {
            return Err(CliError::Config(anyhow!(
                "unknown formulation {other:?} (expected fk | infinite | terminal)"
            )))
        }
    };

    let max_u = table.u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e_var = run(variational_energy_exact(&model, &space, |s| {
        (table.u[space.index_of(s).unwrap()] - max_u).exp()
    }))?;

    let dump = (dump_states && space.len() <= STATE_DUMP_CAP).then(|| {
        space
            .states()
            .iter()
            .zip(&table.u)
            .map(|(s, u)| json!([s.to_string(), u]))
            .collect::<Vec<_>>()
    });

    Ok(json!({
        "schema": 1,
        "command": "solve",
        "config": {
            "model": resolved,
            "formulation": label,
            "dt": if label == "fk" { Some(dt) } else { None },
            "shift": if label == "infinite" { Some(shift.unwrap_or_else(|| model.max_diag(&space) + 1.0)) } else { None },
            "tol": tol,
            "max_sweeps": max_sweeps,
        },
        "result": {
            "e0": e0_out,
            "e0_per_site": e0_out / model.n_sites() as f64,
            "r_star": table.r_star,
            "sweeps": table.sweeps,
            "sup_change": table.sup_change,
            "e_var": e_var,
            "u": dump,
        },
    }))
}

fn default_terminals(
    model: &StoquasticModel,
    sector: Sector,
    space: &StateSpace,
) -> Vec<SpinConfig> {
    match (model.kind(), sector) {
        (ModelKind::Ising { .. }, Sector::Full) => vec![
            SpinConfig::all_up(model.n_sites()),
            SpinConfig::all_down(model.n_sites()),
        ],
        // Restricted sectors: the classical ground state of the sector.
        _ => vec![model.classical_ground_state(space)],
    }
}

/// Optional JSON config file for `train`; command-line flags override.
/// Unknown keys are rejected. The resolved form of this same schema is
/// echoed into the result, so an emitted config re-runs as-is.
#[derive(Debug, Default, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainFileConfig {
    pub model: Option<String>,
    pub j: Option<f64>,
    pub h: Option<f64>,
    pub dims: Option<String>,
    pub formulation: Option<String>,
    pub dt: Option<f64>,
    pub shift: Option<f64>,
    pub episodes: Option<usize>,
    pub batch_size: Option<usize>,
    pub buffer_capacity: Option<usize>,
    pub channels: Option<usize>,
    pub hidden_layers: Option<usize>,
    pub learning_rate: Option<f64>,
    pub lr_decay: Option<f64>,
    pub lr_decay_interval: Option<usize>,
    pub target_update_interval: Option<usize>,
    pub validation_interval: Option<usize>,
    pub validation: Option<String>,
    pub validation_steps: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct TrainArgsResolved {
    pub model_args: ModelArgs,
    pub formulation: TrainFormulation,
    pub formulation_label: String,
    pub config: TrainConfig,
}

impl TrainArgsResolved {
    /// Fully resolved flat config, in the file-config schema.
    fn as_file_config(&self) -> TrainFileConfig {
        let (dt, shift) = match self.formulation {
            TrainFormulation::ContinuousFk { dt } => (Some(dt), None),
            TrainFormulation::DiscreteInfinite { shift } => (None, shift),
            TrainFormulation::DiscreteTerminal => (None, None),
        };
        let (validation, validation_steps) = match self.config.validation {
            Validation::MonteCarlo { steps, .. } => (Some("mc".to_string()), Some(steps)),
            Validation::Exact { .. } => (Some("exact".to_string()), None),
        };
        TrainFileConfig {
            model: Some(self.model_args.model.clone()),
            j: Some(self.model_args.j),
            h: Some(self.model_args.h),
            dims: Some(self.model_args.dims.clone()),
            formulation: Some(self.formulation_label.clone()),
            dt,
            shift,
            episodes: Some(self.config.episodes),
            batch_size: Some(self.config.batch_size),
            buffer_capacity: Some(self.config.buffer_capacity),
            channels: Some(self.config.channels),
            hidden_layers: Some(self.config.hidden_layers),
            learning_rate: Some(self.config.learning_rate),
            lr_decay: Some(self.config.lr_decay),
            lr_decay_interval: Some(self.config.lr_decay_interval),
            target_update_interval: Some(self.config.target_update_interval),
            validation_interval: Some(self.config.validation_interval),
            validation,
            validation_steps,
            seed: Some(self.config.seed),
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn resolve_train_args(
    file: Option<&Path>,
    model: Option<String>,
    j: Option<f64>,
    h: Option<f64>,
    dims: Option<String>,
    formulation: Option<String>,
    dt: Option<f64>,
    shift: Option<f64>,
    episodes: Option<usize>,
    batch_size: Option<usize>,
    buffer_capacity: Option<usize>,
    channels: Option<usize>,
    hidden_layers: Option<usize>,
    learning_rate: Option<f64>,
    validation: Option<String>,
    validation_steps: Option<usize>,
    seed: Option<u64>,
) -> Result<TrainArgsResolved, CliError> {
    let from_file: TrainFileConfig = match file {
        Some(path) => {
            let text = cfg(std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display())))?;
            cfg(serde_json::from_str(&text).context("parsing config file"))?
        }
        None => TrainFileConfig::default(),
    };

    let model_args = ModelArgs {
        model: model.or(from_file.model).unwrap_or_else(|| "ising".into()),
        j: j.or(from_file.j).unwrap_or(1.0),
        h: h.or(from_file.h).unwrap_or(1.0),
        j_perp: None,
        dims: dims.or(from_file.dims).unwrap_or_else(|| "4x4".into()),
        open: false,
        sector: "full".into(),
    };

    let formulation_label = formulation
        .or(from_file.formulation)
        .unwrap_or_else(|| "terminal".into());
    let dt = dt.or(from_file.dt).unwrap_or(1e-4);
    let shift = shift.or(from_file.shift);
    let train_formulation = match formulation_label.as_str() {
        "fk" => TrainFormulation::ContinuousFk { dt },
        "infinite" => TrainFormulation::DiscreteInfinite { shift },
        "terminal" => TrainFormulation::DiscreteTerminal,
        other => {
            return Err(CliError::Config(anyhow!(
                "unknown formulation {other:?} (expected fk | infinite | terminal)"
            )))
        }
    };

    let mut config = TrainConfig::full_scale_defaults(train_formulation);
    if let Some(v) = episodes.or(from_file.episodes) {
        config.episodes = v;
    }
    if let Some(v) = batch_size.or(from_file.batch_size) {
        config.batch_size = v;
    }
    if let Some(v) = buffer_capacity.or(from_file.buffer_capacity) {
        config.buffer_capacity = v;
    }
    if let Some(v) = channels.or(from_file.channels) {
        config.channels = v;
    }
    if let Some(v) = hidden_layers.or(from_file.hidden_layers) {
        config.hidden_layers = v;
    }
    if let Some(v) = learning_rate.or(from_file.learning_rate) {
        config.learning_rate = v;
    }
    if let Some(v) = from_file.lr_decay {
        config.lr_decay = v;
    }
    if let Some(v) = from_file.lr_decay_interval {
        config.lr_decay_interval = v;
    }
    if let Some(v) = from_file.target_update_interval {
        config.target_update_interval = v;
    }
    if let Some(v) = from_file.validation_interval {
        config.validation_interval = v;
    }
    let validation_label = validation
        .or(from_file.validation)
        .unwrap_or_else(|| "mc".into());
    let steps = validation_steps.or(from_file.validation_steps).unwrap_or(2048);
    config.validation = match validation_label.as_str() {
        "mc" => Validation::MonteCarlo {
            steps,
            burn_in: 0,
        },
        "exact" => Validation::Exact { cap: 20 },
        other => {
            return Err(CliError::Config(anyhow!(
                "unknown validation method {other:?} (expected mc | exact)"
            )))
        }
    };
    config.seed = seed.or(from_file.seed).unwrap_or(0);

    Ok(TrainArgsResolved {
        model_args,
        formulation: train_formulation,
        formulation_label,
        config,
    })
}

pub fn train(resolved: TrainArgsResolved, out_dir: &Path) -> Result<serde_json::Value, CliError> {
    let (model, _, resolved_model) = cfg(resolved.model_args.build())?;
    cfg(std::fs::create_dir_all(out_dir).context("creating output directory"))?;

    let config = resolved.config.clone();
    let episodes = config.episodes;
    let mut trainer = cfg(Trainer::new(model.clone(), config))?;
    run(trainer.train_episodes(episodes))?;

    let checkpoint_path = out_dir.join("checkpoint.ckpt");
    run(save_checkpoint(
        &checkpoint_path,
        &trainer.net,
        &model,
        resolved.formulation,
        trainer.config.hidden_layers,
        trainer.config.channels,
        trainer.e0_estimate(),
        trainer.episode(),
    ))?;

    let log_path = out_dir.join("training_log.csv");
    let mut csv = String::from("episode,loss,e_var,e_var_std_error,e0_estimate,learning_rate\n");
    for r in trainer.log() {
        let e_var = r.e_var.map(|v| v.to_string()).unwrap_or_default();
        let se = r.e_var_std_error.map(|v| v.to_string()).unwrap_or_default();
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.episode, r.loss, e_var, se, r.e0_estimate, r.learning_rate
        ));
    }
    run(std::fs::write(&log_path, csv))?;

    let last = trainer.log().last().copied();
    let last_e_var = trainer.log().iter().rev().find_map(|r| r.e_var);
    let result = json!({
        "schema": 1,
        "command": "train",
        "config": resolved.as_file_config(),
        "result": {
            "model": resolved_model,
            "episodes": trainer.episode(),
            "final_loss": last.map(|r| r.loss),
            "final_e_var": last_e_var,
            "final_e_var_per_site": last_e_var.map(|v| v / model.n_sites() as f64),
            "e0_estimate": trainer.e0_estimate(),
            "checkpoint": checkpoint_path.display().to_string(),
            "training_log": log_path.display().to_string(),
        },
    });
    run(std::fs::write(
        out_dir.join("result.json"),
        format!("{}\n", serde_json::to_string_pretty(&result).unwrap()),
    ))?;
    Ok(result)
}

pub fn parse_proposal(text: &str) -> Result<Proposal, CliError> {
    match text {
        "uniform" => Ok(Proposal::UniformSingleFlip),
        "q1" => Ok(Proposal::QSingleFlip),
        other => {
            if let Some(k_text) = other.strip_prefix("qk:") {
                let k: usize = cfg(k_text
                    .parse()
                    .with_context(|| format!("bad multi-flip count {k_text:?}")))?;
                Ok(Proposal::QMultiFlip(k))
            } else {
                Err(CliError::Config(anyhow!(
                    "unknown proposal {other:?} (expected uniform | q1 | qk:<k>)"
                )))
            }
        }
    }
}

fn load_problem(checkpoint: &Path) -> Result<(Checkpoint, QLearningProblem), CliError> {
    let ckpt = run(load_checkpoint(checkpoint))?;
    let model = run(ckpt.model())?;
    let problem = run(QLearningProblem::new(model, ckpt.header.formulation))?;
    Ok((ckpt, problem))
}

#[allow(clippy::too_many_arguments)]
pub fn sample(
    checkpoint: &Path,
    proposal_text: &str,
    steps: usize,
    burn_in: Option<usize>,
    s0_text: Option<&str>,
    seed: u64,
    series_out: Option<&Path>,
) -> Result<serde_json::Value, CliError> {
    let proposal = parse_proposal(proposal_text)?;
    let (ckpt, problem) = load_problem(checkpoint)?;
    let n = problem.n_sites();
    let burn = burn_in.unwrap_or(10 * n * n);
    let s0 = match s0_text {
        Some(text) => cfg(SpinConfig::parse(text))?,
        None => half_filled_config(n, &mut Rng::for_substream(seed, "sample-s0")),
    };
    if s0.n_sites() != n {
        return Err(CliError::Config(anyhow!(
            "start configuration has {} sites but the checkpoint lattice has {n}",
            s0.n_sites()
        )));
    }

    let target = NetTarget::new(&problem, &ckpt.net, ckpt.header.e0_estimate);
    let samples = run(sample_chain(&target, proposal, s0, burn + steps, burn, seed))?;
    let (e_var, stats) = run(chain_energy_statistics(problem.model(), &target, &samples))?;

    if let Some(path) = series_out {
        let mut csv = String::from("step,potential\n");
        for (i, &s) in samples.states.iter().enumerate() {
            csv.push_str(&format!("{},{}\n", i, problem.model().potential(s)));
        }
        run(std::fs::write(path, csv))?;
    }

    Ok(json!({
        "schema": 1,
        "command": "sample",
        "config": {
            "checkpoint": checkpoint.display().to_string(),
            "proposal": proposal_text,
            "steps": steps,
            "burn_in": burn,
            "s0": s0.to_string(),
            "seed": seed,
        },
        "result": {
            "e_var": e_var,
            "e_var_per_site": e_var / n as f64,
            "stats": stats,
        },
    }))
}

/// Memoized log-amplitude lookup for checkpoint-backed Doob rates.
struct CachedLogPhi<'a> {
    target: NetTarget<'a>,
    cache: Mutex<HashMap<u64, f64>>,
}

impl CachedLogPhi<'_> {
    fn get(&self, s: SpinConfig) -> f64 {
        if let Some(&v) = self.cache.lock().unwrap().get(&s.bits()) {
            return v;
        }
        let v = stoqrl_core::sampling::SampleTarget::log_phi(&self.target, s);
        self.cache.lock().unwrap().insert(s.bits(), v);
        v
    }
}

#[allow(clippy::too_many_arguments)]
pub fn fk(
    model_args: &ModelArgs,
    rates: &str,
    horizon: f64,
    n_traj: usize,
    e0_arg: Option<f64>,
    s0_text: Option<&str>,
    seed: u64,
    cap: usize,
) -> Result<serde_json::Value, CliError> {
    let parse_s0 = |n: usize| -> Result<SpinConfig, CliError> {
        match s0_text {
            Some(text) => {
                let s = cfg(SpinConfig::parse(text))?;
                if s.n_sites() != n {
                    return Err(CliError::Config(anyhow!(
                        "start configuration has {} sites, lattice has {n}",
                        s.n_sites()
                    )));
                }
                Ok(s)
            }
            None => Ok(half_filled_config(n, &mut Rng::for_substream(seed, "fk-s0"))),
        }
    };

    let (result, config_extra) = if let Some(path) = rates.strip_prefix("checkpoint:") {
        let (ckpt, problem) = load_problem(Path::new(path))?;
        let e0 = e0_arg.unwrap_or(ckpt.header.e0_estimate);
        let s0 = parse_s0(problem.n_sites())?;
        let cached = CachedLogPhi {
            target: NetTarget::new(&problem, &ckpt.net, ckpt.header.e0_estimate),
            cache: Mutex::new(HashMap::new()),
        };
        let log_phi_s0 = cached.get(s0);
        let doob = DoobRates::from_log_fn(problem.model(), |s| cached.get(s));
        let terminal = |s: SpinConfig| (cached.get(s) - log_phi_s0).exp();
        let est = run(fk_importance_estimate(
            problem.model(),
            &doob,
            s0,
            horizon,
            e0,
            &terminal,
            n_traj,
            seed,
        ))?;
        (
            json!({
                "estimate": est.mean,
                "std_error": est.std_error,
                "n_jumps_mean": est.mean_jumps,
                "weight_rel_variance": est.weight_rel_variance,
                "note": "terminal function normalized at s0; estimate near 1 indicates a self-consistent wavefunction",
            }),
            json!({ "rates": rates, "e0": e0, "s0": s0.to_string() }),
        )
    } else {
        let (model, sector, _resolved) = cfg(model_args.build())?;
        let s0 = parse_s0(model.n_sites())?;
        match rates {
            "passive" => {
                let e0 = e0_arg.unwrap_or(0.0);
                let est = fk_estimate(&model, s0, horizon, e0, &|_| 1.0, n_traj, seed);
                (
                    json!({
                        "estimate": est.mean,
                        "std_error": est.std_error,
                        "n_jumps_mean": est.mean_jumps,
                    }),
                    json!({ "rates": rates, "e0": e0, "s0": s0.to_string() }),
                )
            }
            "optimal" => {
                let space = cfg(StateSpace::new(model.lattice(), sector, cap))?;
                let gs = run(ground_state_dense(&model, &space))?;
                let e0 = e0_arg.unwrap_or(gs.energy);
                let doob = run(DoobRates::from_amplitudes(&model, &space, &gs.amplitudes))?;
                let est = run(fk_importance_estimate(
                    &model,
                    &doob,
                    s0,
                    horizon,
                    e0,
                    &|s| gs.amplitude(&space, s),
                    n_traj,
                    seed,
                ))?;
                (
                    json!({
                        "estimate": est.mean,
                        "std_error": est.std_error,
                        "n_jumps_mean": est.mean_jumps,
                        "weight_rel_variance": est.weight_rel_variance,
                        "expected_phi0_s0": gs.amplitude(&space, s0),
                        "oracle_e0": gs.energy,
                    }),
                    json!({ "rates": rates, "e0": e0, "s0": s0.to_string() }),
                )
            }
            other => {
                return Err(CliError::Config(anyhow!(
                    "unknown rates {other:?} (expected passive | optimal | checkpoint:<path>)"
                )))
            }
        }
    };

    let mut config = json!({
        "horizon": horizon,
        "n_traj": n_traj,
        "seed": seed,
    });
    if let (Some(obj), Some(extra)) = (config.as_object_mut(), config_extra.as_object()) {
        for (k, v) in extra {
            obj.insert(k.clone(), v.clone());
        }
    }

    Ok(json!({
        "schema": 1,
        "command": "fk",
        "config": config,
        "result": result,
    }))
}
