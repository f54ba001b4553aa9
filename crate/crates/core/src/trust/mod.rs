//! Theory-of-Planned-Behavior trust model.
//!
//! A user's reputation for an RSU mixes three factors: its own Beta
//! posterior over past interactions (attitude), the posterior over every
//! other user's interactions (subjective norm), and an objective control
//! score built from beacon packet statistics and windowed migration
//! latency. The mix is exponentially smoothed across slots.

pub mod beacon;
pub mod ledger;
pub mod reputation;

pub use beacon::{BeaconStats, PacketCounts};
pub use ledger::{BetaPrior, EvaluationLedger};
pub use reputation::{
    behavioral_intention, perceived_control, smooth_update, FactorWeights, Factors, TrustConfig,
    TrustEngine, TrustEvent,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrustError {
    #[error("unknown user {0}")]
    UnknownUser(usize),
    #[error("unknown RSU {0}")]
    UnknownRsu(usize),
    #[error("invalid trust parameter: {0}")]
    InvalidParameter(String),
}
