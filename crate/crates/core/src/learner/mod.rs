//! Confidence-regulated diffusion actor-critic: replay buffer, twin
//! critics with TD targets, the confidence-weighted actor objective, soft
//! target updates and the epoch loop.

pub mod checkpoint;
mod replay;
mod trainer;

pub use replay::{Batch, ReplayBuffer, Transition};
pub use trainer::{ActorNoise, ActorStats, CriticChoice, EpochStats, Mode, Trainer, TrainerConfig};

use thiserror::Error;

use crate::diffusion::DiffusionError;
use crate::env::EnvError;
use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("invalid trainer configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid transition: {0}")]
    InvalidTransition(String),
    #[error("replay buffer is empty")]
    EmptyBuffer,
    #[error("environment dims {actual:?} do not match trainer dims {expected:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
}
