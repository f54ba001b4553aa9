//! Vehicular edge environment: channel and latency model, action decoding,
//! attacks with moving target defense, and slot dynamics.

pub mod action;
mod config;
pub mod latency;
mod world;

pub use action::{decode_action, DecodedAction};
pub use config::{UniformRange, WorldConfig};
pub use latency::{
    channel_gain, latency_breakdown, link_rate, reward, total_latency, LatencyBreakdown, LatencyInputs,
};
pub use world::{distance, AgentData, Env, RsuProfile, StepOutcome, WorldState, MIN_DISTANCE};

use thiserror::Error;

use crate::trust::TrustError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid world configuration: {0}")]
    InvalidConfig(String),
    #[error("degenerate geometry: vehicle-RSU distance {0} m")]
    DegenerateGeometry(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("hosted vehicle received CPU share {0}")]
    UnservedVehicle(f64),
    #[error("action has dimension {actual}, expected {expected}")]
    ActionDimension { expected: usize, actual: usize },
    #[error("action entry {0} is not finite")]
    NonFiniteAction(usize),
    #[error("no RSU has spare capacity")]
    CapacityExhausted,
    #[error("episode already ended")]
    EpisodeEnded,
    #[error(transparent)]
    Trust(#[from] TrustError),
}
