use thiserror::Error;

/// Errors surfaced by lattice construction, solvers, simulators, and samplers.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("invalid action: {0}")]
    InvalidAction(String),

    #[error("state space too large: {n_sites} sites exceeds cap of {cap}")]
    StateSpaceTooLarge { n_sites: usize, cap: usize },

    #[error("translation symmetry unavailable: lattice is not periodic in dimension {dim}")]
    SymmetryUnavailable { dim: usize },

    #[error("model is not stoquastic/ergodic as constructed: {0}")]
    NonStoquastic(String),

    #[error("ground state degenerate: sector splits into {components} disconnected components")]
    DegenerateGroundState { components: usize },

    #[error("no convergence after {iterations} iterations (last change {last_change:e})")]
    ConvergenceFailure { iterations: usize, last_change: f64 },

    #[error("shift C = {shift} must exceed max diagonal {max_diag}")]
    InvalidShift { shift: f64, max_diag: f64 },

    #[error("non-ergodic: state {state} has no off-diagonal neighbors")]
    NonErgodic { state: String },

    #[error("invalid scale: H_ss = {diag} does not exceed E0 estimate {e0}")]
    InvalidScale { diag: f64, e0: f64 },

    #[error("wavefunction amplitude is zero at state {state}")]
    DivisionByZeroAmplitude { state: String },

    #[error("timestep {dt} too large: exit rate {exit_rate} gives negative stay probability")]
    TimestepTooLarge { dt: f64, exit_rate: f64 },

    #[error("terminal states unreachable from {unreachable_from} states in the sector")]
    TerminalUnreachable { unreachable_from: usize },

    #[error("rate support mismatch: parameterized rate {rate} on a transition with zero passive rate")]
    SupportMismatch { rate: f64 },

    #[error("sampler stuck: zero accepted moves over {steps} steps")]
    SamplerStuck { steps: usize },

    #[error("degenerate series: {0}")]
    DegenerateSeries(String),

    #[error("invalid wavefunction: {0}")]
    InvalidWavefunction(String),
}

pub type Result<T> = std::result::Result<T, Error>;
