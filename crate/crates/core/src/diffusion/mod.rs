//! Conditional denoising diffusion policy: noise schedule, forward
//! corruption, the reverse sampling chain and the denoising-consistency
//! loss with its confidence weight.

mod policy;
mod schedule;

pub use policy::{
    normal_matrix, squash, squash_derivative, step_embedding, unsquash, unsquash_derivative, ChainNoise, ChainTrace,
    ConsistencyNoise, ConsistencyTrace, DiffusionPolicy, NoiseClamp, EMBEDDING_DIM, LATENT_BOUND,
};
pub use schedule::{confidence, forward_sample, forward_step, NoiseSchedule};

use thiserror::Error;

use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("invalid noise schedule: {0}")]
    InvalidSchedule(String),
    #[error("denoising step {k} outside 1..={max}")]
    StepOutOfRange { k: usize, max: usize },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("sampling diverged at step {step} (entry {index})")]
    SamplingDivergence { step: usize, index: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
}
