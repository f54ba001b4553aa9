//! Minimal differentiable function approximation: dense networks,
//! Adam, central-difference gradient checks, and binary checkpoints.

mod adam;
pub mod checkpoint;
mod dense;
pub mod gradcheck;

pub use adam::AdamState;
pub use dense::{Activation, DenseNet, Gradients, Layer, Tape};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid architecture {0:?}")]
    InvalidArchitecture(Vec<usize>),
    #[error("backward called without a recorded forward pass")]
    NoForwardPass,
    #[error("training diverged: non-finite gradient at parameter {index}")]
    NonFiniteGradient { index: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
