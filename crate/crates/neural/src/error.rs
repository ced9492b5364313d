use thiserror::Error;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error(transparent)]
    Core(#[from] stoqrl_core::Error),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("training diverged at episode {episode} (loss {loss}); state kept at last finite step")]
    Diverged { episode: usize, loss: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, NeuralError>;
