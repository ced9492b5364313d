//! Neural action-value representation of stoquastic ground states.
//!
//! A convolutional network maps the ±1 spin field to per-site flip values
//! Q(s, Flip(site)); the wavefunction follows as φ(s) = E_{a~p}[exp Q(s,a)].
//! Training is soft Q-learning against the Bellman residual of the chosen
//! formulation, with a replay buffer, a target network, Adam, and periodic
//! variational-energy validation. Everything is f64 and hand-differentiated.

pub mod adam;
pub mod checkpoint;
pub mod error;
pub mod loss;
pub mod net;
pub mod replay;
pub mod train;

pub use error::{NeuralError, Result};
pub use loss::{QLearningProblem, TrainFormulation};
pub use net::QNetwork;
pub use train::{train_soft_q, TrainConfig, Trainer, Validation};
