//! Ground states of stoquastic lattice models through maximum-entropy RL:
//! exact validation, tabular solves, soft Q-learning training,
//! Metropolis-Hastings sampling, and Feynman-Kac estimation.

mod args;
mod commands;

use args::ModelArgs;
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug)]
pub enum CliError {
    /// Invalid configuration: exit code 2.
    Config(anyhow::Error),
    /// Failure while running: exit code 1.
    Runtime(anyhow::Error),
}

#[derive(Parser)]
#[command(name = "stoqrl", version, about)]
struct Cli {
    /// Write the result JSON here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact ground state by shifted power iteration (the oracle).
    Validate {
        #[command(flatten)]
        model: ModelArgs,
        /// Enumeration cap: refuse lattices with more sites than this.
        #[arg(long, default_value_t = 20)]
        cap: usize,
    },

    /// Tabular solve of one RL formulation over an enumerable sector.
    Solve {
        #[command(flatten)]
        model: ModelArgs,
        /// Formulation: fk | infinite | terminal.
        #[arg(long)]
        formulation: String,
        /// Timestep of the continuous formulation.
        #[arg(long, default_value_t = 1e-4)]
        dt: f64,
        /// Shift C of the infinite formulation (default: max H_ss + 1).
        #[arg(long)]
        shift: Option<f64>,
        /// Ground-state energy for the terminal reward (default:
        /// determined self-consistently).
        #[arg(long)]
        e0: Option<f64>,
        /// Comma-separated terminal configurations like "+++,---"
        /// (default: the entirely magnetized states).
        #[arg(long)]
        terminal: Option<String>,
        /// Sup-norm convergence tolerance.
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
        #[arg(long, default_value_t = 5_000_000)]
        max_sweeps: usize,
        /// Include the per-state value table (sectors up to 2^14 states).
        #[arg(long)]
        dump_states: bool,
        #[arg(long, default_value_t = 20)]
        cap: usize,
    },

    /// Soft Q-learning on the transverse-field Ising model.
    Train {
        /// JSON config file; explicit flags override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for checkpoint.ckpt, training_log.csv, result.json.
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        j: Option<f64>,
        #[arg(long)]
        h: Option<f64>,
        /// Lattice extents, e.g. "4x4" (periodic).
        #[arg(long)]
        dims: Option<String>,
        /// Formulation: fk | infinite | terminal.
        #[arg(long)]
        formulation: Option<String>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        shift: Option<f64>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        buffer_capacity: Option<usize>,
        #[arg(long)]
        channels: Option<usize>,
        #[arg(long)]
        hidden_layers: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        /// Validation method: mc | exact.
        #[arg(long)]
        validation: Option<String>,
        #[arg(long)]
        validation_steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },

    /// Metropolis-Hastings sampling of φ² from a trained checkpoint.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Proposal: uniform | q1 | qk:<k>.
        #[arg(long, default_value = "uniform")]
        proposal: String,
        /// Recorded steps after burn-in.
        #[arg(long, default_value_t = 100_000)]
        steps: usize,
        /// Burn-in steps (default: 10·N sweeps).
        #[arg(long)]
        burn_in: Option<usize>,
        /// Start configuration as '+'/'-' (default: random half filling).
        #[arg(long)]
        s0: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the potential-energy series CSV here.
        #[arg(long)]
        series_out: Option<PathBuf>,
    },

    /// Feynman-Kac Monte-Carlo estimation along passive, optimal, or
    /// checkpoint-learned rates.
    Fk {
        #[command(flatten)]
        model: ModelArgs,
        /// Rates: passive | optimal | checkpoint:<path>.
        #[arg(long, default_value = "passive")]
        rates: String,
        /// Time horizon T.
        #[arg(long, default_value_t = 1.0)]
        t_horizon: f64,
        #[arg(long, default_value_t = 10_000)]
        n_traj: usize,
        /// Energy shift in the weight exp(-∫(V - E0)dt).
        #[arg(long)]
        e0: Option<f64>,
        /// Start configuration (default: random half filling).
        #[arg(long)]
        s0: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        cap: usize,
    },
}

fn dispatch(command: Command) -> Result<serde_json::Value, CliError> {
    match command {
        Command::Validate { model, cap } => commands::validate(&model, cap),
        Command::Solve {
            model,
            formulation,
            dt,
            shift,
            e0,
            terminal,
            tol,
            max_sweeps,
            dump_states,
            cap,
        } => commands::solve(
            &model,
            &formulation,
            dt,
            shift,
            e0,
            terminal.as_deref(),
            tol,
            max_sweeps,
            dump_states,
            cap,
        ),
        Command::Train {
            config,
            out_dir,
            model,
            j,
            h,
            dims,
            formulation,
            dt,
            shift,
            episodes,
            batch_size,
            buffer_capacity,
            channels,
            hidden_layers,
            learning_rate,
            validation,
            validation_steps,
            seed,
        } => {
            let resolved = commands::resolve_train_args(
                config.as_deref(),
                model,
                j,
                h,
                dims,
                formulation,
                dt,
                shift,
                episodes,
                batch_size,
                buffer_capacity,
                channels,
                hidden_layers,
                learning_rate,
                validation,
                validation_steps,
                seed,
            )?;
            commands::train(resolved, &out_dir)
        }
        Command::Sample {
            checkpoint,
            proposal,
            steps,
            burn_in,
            s0,
            seed,
            series_out,
        } => commands::sample(
            &checkpoint,
            &proposal,
            steps,
            burn_in,
            s0.as_deref(),
            seed,
            series_out.as_deref(),
        ),
        Command::Fk {
            model,
            rates,
            t_horizon,
            n_traj,
            e0,
            s0,
            seed,
            cap,
        } => commands::fk(&model, &rates, t_horizon, n_traj, e0, s0.as_deref(), seed, cap),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = cli.out.clone();
    match dispatch(cli.command) {
        Ok(value) => {
            let text = format!("{}\n", serde_json::to_string_pretty(&value).unwrap());
            match out {
                Some(path) => {
                    if let Err(e) = std::fs::write(&path, text) {
                        eprintln!("error writing {}: {e}", path.display());
                        return ExitCode::from(1);
                    }
                }
                None => print!("{text}"),
            }
            ExitCode::SUCCESS
        }
        Err(CliError::Config(e)) => {
            eprintln!("configuration error: {e:#}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
