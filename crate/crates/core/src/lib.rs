//! Ground states of stoquastic quantum lattice models via maximum-entropy
//! reinforcement learning.
//!
//! A stoquastic Hamiltonian decomposes as H = -Γ + V, with Γ the rates of a
//! continuous-time Markov chain (the passive dynamics) and V a diagonal
//! potential. The ground state φ0 is then the fixed point of stochastic
//! equations that double as soft Bellman equations, with log φ0 the optimal
//! state-value. This crate holds the exact machinery: lattices and spin
//! configurations, model matrix elements, brute-force oracles, tabular
//! solvers for the three RL formulations, continuous-time simulation with
//! importance sampling, and Metropolis-Hastings sampling of φ².

pub mod error;
pub mod exact;
pub mod fk;
pub mod hamiltonian;
pub mod lattice;
pub mod mdp;
pub mod numeric;
pub mod rng;
pub mod sampling;

pub use error::{Error, Result};
pub use hamiltonian::{ModelKind, StoquasticModel};
pub use lattice::{Action, Lattice, Sector, SpinConfig, StateSpace};
