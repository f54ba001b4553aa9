//! Experiment orchestration: flat key/value configuration, the random
//! baseline, training runs over modes × seeds × sweep values, and CSV
//! metric emission with a replayable manifest.

mod config;
pub mod metrics;
mod run;

pub use config::{find_key, keys, load_config, parse_document, EvalPolicy, ExperimentConfig, Key, RunMode, SweepAxis};
pub use metrics::{read_metrics, summarize, write_metrics, write_summary, MetricRow, SummaryRow};
pub use run::{
    evaluate, random_policy, replay, run_experiment, run_id, stay_policy, ExperimentReport, ReplayReport, RunOutcome,
    RunStatus, EVAL_SEED_BASE,
};

use std::path::PathBuf;

use thiserror::Error;

use crate::env::EnvError;
use crate::learner::LearnerError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration key `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("configuration syntax: {0}")]
    Parse(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
}
