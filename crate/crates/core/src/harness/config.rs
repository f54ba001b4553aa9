use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use toml::{Table, Value};

use super::HarnessError;
use crate::diffusion::NoiseClamp;
use crate::env::{UniformRange, WorldConfig};
use crate::learner::{CriticChoice, Mode, TrainerConfig};
use crate::nn::Activation;
use crate::trust::{BetaPrior, TrustConfig};

/// A learner mode or the uniform-random baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    Learner(Mode),
    Random,
}

impl RunMode {
    pub fn name(self) -> &'static str {
        match self {
            RunMode::Learner(m) => m.name(),
            RunMode::Random => "random",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        if name == "random" {
            Some(RunMode::Random)
        } else {
            Mode::parse(name).map(RunMode::Learner)
        }
    }

    /// The four learner variants compared by the ablation study.
    pub fn ablation() -> Vec<RunMode> {
        Mode::ALL.into_iter().map(RunMode::Learner).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    /// Construction data size, Mbit; all agents get the same size.
    DataSize,
    /// Vehicle-RSU bandwidth, Mbit/s, both directions.
    Bandwidth,
    /// RSU CPU speed, cycles/s.
    Compute,
    AttackFrequency,
    DenoisingSteps,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 5] = [
        SweepAxis::DataSize,
        SweepAxis::Bandwidth,
        SweepAxis::Compute,
        SweepAxis::AttackFrequency,
        SweepAxis::DenoisingSteps,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::DataSize => "data-size",
            SweepAxis::Bandwidth => "bandwidth",
            SweepAxis::Compute => "compute",
            SweepAxis::AttackFrequency => "attack-frequency",
            SweepAxis::DenoisingSteps => "denoising-steps",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        SweepAxis::ALL.into_iter().find(|a| a.name() == name)
    }

    /// Admissible values unless `experiment.allow_out_of_range` is set.
    pub fn range(self) -> (f64, f64) {
        match self {
            SweepAxis::DataSize => (100.0, 600.0),
            SweepAxis::Bandwidth => (100.0, 300.0),
            SweepAxis::Compute => (1.0e8, 3.0e8),
            SweepAxis::AttackFrequency => (0.0, 1.0),
            SweepAxis::DenoisingSteps => (1.0, 15.0),
        }
    }

    /// Pins the swept quantity of `cfg` to `value`.
    pub fn apply(self, value: f64, cfg: &mut ExperimentConfig) {
        match self {
            SweepAxis::DataSize => cfg.world.data_size = UniformRange::constant(value),
            SweepAxis::Bandwidth => {
                cfg.world.uplink_bandwidth = UniformRange::constant(value);
                cfg.world.downlink_bandwidth = UniformRange::constant(value);
            }
            SweepAxis::Compute => cfg.world.cpu_speed = UniformRange::constant(value),
            SweepAxis::AttackFrequency => cfg.world.attack_frequency = value,
            SweepAxis::DenoisingSteps => cfg.trainer.denoising_steps = value as usize,
        }
    }
}

/// How `evaluate` chooses actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalPolicy {
    Random,
    /// Keep every agent on its host, split CPU evenly, MTD off.
    Stay,
    /// Actor restored from `experiment.policy_checkpoint`.
    Actor,
}

impl EvalPolicy {
    pub fn name(self) -> &'static str {
        match self {
            EvalPolicy::Random => "random",
            EvalPolicy::Stay => "stay",
            EvalPolicy::Actor => "actor",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        [EvalPolicy::Random, EvalPolicy::Stay, EvalPolicy::Actor]
            .into_iter()
            .find(|p| p.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub world: WorldConfig,
    pub trust: TrustConfig,
    /// `trainer.mode` is overwritten per run from `modes`.
    pub trainer: TrainerConfig,
    pub modes: Vec<RunMode>,
    pub seeds: Vec<u64>,
    /// Evaluation episodes behind each test-reward point.
    pub eval_episodes: usize,
    /// Epochs at the end of a run averaged into `final_test_reward`.
    pub final_window: usize,
    pub out_dir: PathBuf,
    pub sweep_axis: Option<SweepAxis>,
    pub sweep_values: Vec<f64>,
    pub allow_out_of_range: bool,
    /// Checkpoint period in epochs; 0 keeps only the final checkpoint.
    pub checkpoint_every: usize,
    /// Append a per-slot reputation trace of one evaluation episode to
    /// each run's metrics.
    pub trace_reputation: bool,
    pub eval_policy: EvalPolicy,
    pub policy_checkpoint: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            world: WorldConfig::default(),
            trust: TrustConfig::default(),
            trainer: TrainerConfig::default(),
            modes: vec![RunMode::Learner(Mode::Cgdm)],
            seeds: vec![1, 2, 3],
            eval_episodes: 5,
            final_window: 20,
            out_dir: PathBuf::from("runs"),
            sweep_axis: None,
            sweep_values: Vec::new(),
            allow_out_of_range: false,
            checkpoint_every: 0,
            trace_reputation: true,
            eval_policy: EvalPolicy::Stay,
            policy_checkpoint: PathBuf::new(),
        }
    }
}

/// Conversion between a config field and its document value.
trait Field: Sized {
    fn encode(&self) -> Value;
    fn decode(v: &Value) -> Result<Self, String>;
}

fn float(v: &Value) -> Result<f64, String> {
    match v {
        Value::Float(x) => Ok(*x),
        Value::Integer(i) => Ok(*i as f64),
        other => Err(format!("expected a number, got {other}")),
    }
}

fn array(v: &Value) -> Result<&Vec<Value>, String> {
    v.as_array().ok_or_else(|| format!("expected an array, got {v}"))
}

fn pair(v: &Value) -> Result<(f64, f64), String> {
    match array(v)?.as_slice() {
        [a, b] => Ok((float(a)?, float(b)?)),
        _ => Err(format!("expected a two-element array, got {v}")),
    }
}

fn name_of<T>(v: &Value, parse: impl Fn(&str) -> Option<T>, choices: &str) -> Result<T, String> {
    let s = v.as_str().ok_or_else(|| format!("expected a string, got {v}"))?;
    parse(s).ok_or_else(|| format!("unknown value \"{s}\", expected one of {choices}"))
}

impl Field for f64 {
    fn encode(&self) -> Value {
        Value::Float(*self)
    }
    fn decode(v: &Value) -> Result<Self, String> {
        float(v)
    }
}

impl Field for u64 {
    fn encode(&self) -> Value {
        Value::Integer(*self as i64)
    }
    fn decode(v: &Value) -> Result<Self, String> {
        match v.as_integer() {
            Some(i) if i >= 0 => Ok(i as u64),
            _ => Err(format!("expected a non-negative integer, got {v}")),
        }
    }
}

impl Field for usize {
    fn encode(&self) -> Value {
        Value::Integer(*self as i64)
    }
    fn decode(v: &Value) -> Result<Self, String> {
        u64::decode(v).map(|x| x as usize)
    }
}

impl Field for bool {
    fn encode(&self) -> Value {
        Value::Boolean(*self)
    }
    fn decode(v: &Value) -> Result<Self, String> {
        v.as_bool().ok_or_else(|| format!("expected true or false, got {v}"))
    }
}

impl Field for PathBuf {
    fn encode(&self) -> Value {
        Value::String(self.to_string_lossy().into_owned())
    }
    fn decode(v: &Value) -> Result<Self, String> {
        v.as_str()
            .map(PathBuf::from)
            .ok_or_else(|| format!("expected a path string, got {v}"))
    }
}

impl<T: Field> Field for Vec<T> {
    fn encode(&self) -> Value {
        Value::Array(self.iter().map(Field::encode).collect())
    }
    fn decode(v: &Value) -> Result<Self, String> {
        array(v)?.iter().map(T::decode).collect()
    }
}

impl Field for [f64; 2] {
    fn encode(&self) -> Value {
        Value::Array(vec![Value::Float(self[0]), Value::Float(self[1])])
    }
    fn decode(v: &Value) -> Result<Self, String> {
        pair(v).map(|(a, b)| [a, b])
    }
}

impl Field for [f64; 3] {
    fn encode(&self) -> Value {
        Value::Array(self.iter().map(|&x| Value::Float(x)).collect())
    }
    fn decode(v: &Value) -> Result<Self, String> {
        match array(v)?.as_slice() {
            [a, b, c] => Ok([float(a)?, float(b)?, float(c)?]),
            _ => Err(format!("expected a three-element array, got {v}")),
        }
    }
}

impl Field for (f64, f64) {
    fn encode(&self) -> Value {
        [self.0, self.1].encode()
    }
    fn decode(v: &Value) -> Result<Self, String> {
        pair(v)
    }
}

impl Field for UniformRange {
    fn encode(&self) -> Value {
        [self.lo, self.hi].encode()
    }
    fn decode(v: &Value) -> Result<Self, String> {
        pair(v).map(|(lo, hi)| UniformRange::new(lo, hi))
    }
}

impl Field for BetaPrior {
    fn encode(&self) -> Value {
        [self.alpha, self.beta].encode()
    }
    fn decode(v: &Value) -> Result<Self, String> {
        pair(v).map(|(alpha, beta)| BetaPrior { alpha, beta })
    }
}

/// Zero stands for "derive from the fleet size".
impl Field for Option<usize> {
    fn encode(&self) -> Value {
        self.unwrap_or(0).encode()
    }
    fn decode(v: &Value) -> Result<Self, String> {
        usize::decode(v).map(|n| (n > 0).then_some(n))
    }
}

impl Field for Activation {
    fn encode(&self) -> Value {
        Value::String(
            match self {
                Activation::Identity => "identity",
                Activation::Tanh => "tanh",
                Activation::Mish => "mish",
            }
            .into(),
        )
    }
    fn decode(v: &Value) -> Result<Self, String> {
        name_of(
            v,
            |s| match s {
                "identity" => Some(Activation::Identity),
                "tanh" => Some(Activation::Tanh),
                "mish" => Some(Activation::Mish),
                _ => None,
            },
            "identity, tanh, mish",
        )
    }
}

impl Field for NoiseClamp {
    fn encode(&self) -> Value {
        Value::String(
            match self {
                NoiseClamp::Tanh => "tanh",
                NoiseClamp::Unclamped => "none",
            }
            .into(),
        )
    }
    fn decode(v: &Value) -> Result<Self, String> {
        name_of(
            v,
            |s| match s {
                "tanh" => Some(NoiseClamp::Tanh),
                "none" => Some(NoiseClamp::Unclamped),
                _ => None,
            },
            "tanh, none",
        )
    }
}

impl Field for CriticChoice {
    fn encode(&self) -> Value {
        Value::String(
            match self {
                CriticChoice::First => "first",
                CriticChoice::Min => "min",
            }
            .into(),
        )
    }
    fn decode(v: &Value) -> Result<Self, String> {
        name_of(
            v,
            |s| match s {
                "first" => Some(CriticChoice::First),
                "min" => Some(CriticChoice::Min),
                _ => None,
            },
            "first, min",
        )
    }
}

impl Field for RunMode {
    fn encode(&self) -> Value {
        Value::String(self.name().into())
    }
    fn decode(v: &Value) -> Result<Self, String> {
        name_of(v, RunMode::parse, "cgdm, no-con, no-dc, gdm, random")
    }
}

impl Field for EvalPolicy {
    fn encode(&self) -> Value {
        Value::String(self.name().into())
    }
    fn decode(v: &Value) -> Result<Self, String> {
        name_of(v, EvalPolicy::parse, "random, stay, actor")
    }
}

/// The empty string means "no sweep".
impl Field for Option<SweepAxis> {
    fn encode(&self) -> Value {
        Value::String(self.map_or("", SweepAxis::name).into())
    }
    fn decode(v: &Value) -> Result<Self, String> {
        match v.as_str() {
            Some("") => Ok(None),
            _ => name_of(
                v,
                SweepAxis::parse,
                "\"\", data-size, bandwidth, compute, attack-frequency, denoising-steps",
            )
            .map(Some),
        }
    }
}

/// One documented configuration key.
pub struct Key {
    pub name: &'static str,
    pub doc: &'static str,
    get: fn(&ExperimentConfig) -> Value,
    set: fn(&mut ExperimentConfig, &Value) -> Result<(), String>,
}

impl Key {
    pub fn value(&self, cfg: &ExperimentConfig) -> Value {
        (self.get)(cfg)
    }

    pub fn assign(&self, cfg: &mut ExperimentConfig, v: &Value) -> Result<(), HarnessError> {
        (self.set)(cfg, v).map_err(|message| HarnessError::Config {
            key: self.name.into(),
            message,
        })
    }
}

macro_rules! key {
    ($name:literal, $doc:literal, $($f:ident).+) => {
        Key {
            name: $name,
            doc: $doc,
            get: |c| Field::encode(&c.$($f).+),
            set: |c, v| {
                c.$($f).+ = Field::decode(v)?;
                Ok(())
            },
        }
    };
}

/// Every accepted key, in manifest order.
pub fn keys() -> &'static [Key] {
    static KEYS: &[Key] = &[
        key!("world.num_vehicles", "vehicles V", world.num_vehicles),
        key!("world.num_rsus", "RSUs S", world.num_rsus),
        key!("world.map_extent", "side of the square map, m", world.map_extent),
        key!("world.rsu_positions", "[[x, y], ...] in m; empty = grid", world.rsu_positions),
        key!("world.rsu_coverage_radius", "m", world.rsu_coverage_radius),
        key!("world.carrier_frequency", "Hz", world.carrier_frequency),
        key!("world.channel_gain_coeff", "path-loss constant", world.channel_gain_coeff),
        key!("world.light_speed", "m/s", world.light_speed),
        key!("world.uplink_bandwidth", "[lo, hi] Mbit/s per RSU", world.uplink_bandwidth),
        key!("world.downlink_bandwidth", "[lo, hi] Mbit/s per RSU", world.downlink_bandwidth),
        key!("world.inter_rsu_bandwidth", "Mbit/s", world.inter_rsu_bandwidth),
        key!("world.vehicle_tx_power", "W", world.vehicle_tx_power),
        key!("world.noise_power", "W", world.noise_power),
        key!("world.cycles_per_bit", "CPU cycles per bit of compute load", world.cycles_per_bit),
        key!("world.cpu_speed", "[lo, hi] cycles/s per RSU", world.cpu_speed),
        key!("world.rsu_max_load", "agents per RSU; 0 = ceil(2V/S)", world.rsu_max_load),
        key!("world.mtd_latency", "extra latency of an MTD reconfiguration, s", world.mtd_latency),
        key!("world.attack_frequency", "per-slot attack probability on each target", world.attack_frequency),
        key!("world.attack_targets", "attacked RSU indices", world.attack_targets),
        key!("world.attack_degradation", "bandwidth/CPU factor of an attacked RSU", world.attack_degradation),
        key!("world.episode_length", "slots per episode", world.episode_length),
        key!("world.reputation_threshold", "migration mask threshold", world.reputation_threshold),
        key!("world.slot_duration", "s", world.slot_duration),
        key!("world.vehicle_speed", "[lo, hi] m/s", world.vehicle_speed),
        key!("world.data_size", "[lo, hi] construction data, Mbit", world.data_size),
        key!("world.raw_data_fraction", "raw data relative to construction data", world.raw_data_fraction),
        key!("world.compute_load_fraction", "compute load relative to construction data", world.compute_load_fraction),
        key!("world.result_data_fraction", "result data relative to construction data", world.result_data_fraction),
        key!("world.beacon_packets", "beacon packets per vehicle, RSU and slot", world.beacon_packets),
        key!("world.base_packet_loss", "beacon loss rate of a healthy RSU", world.base_packet_loss),
        key!("world.attack_packet_loss", "beacon loss rate of an attacked RSU", world.attack_packet_loss),
        key!("world.seed", "seed of RSU hardware and user tolerances", world.seed),
        key!("trust.attitude_prior", "[alpha, beta] of the attitude posterior", trust.attitude_prior),
        key!("trust.norm_prior", "[alpha, beta] of the norm posterior", trust.norm_prior),
        key!("trust.weights", "[attitude, norm, control], normalized", trust.weights),
        key!("trust.reliability_mix", "lambda: delivery vs forwarding", trust.reliability_mix),
        key!("trust.control_mix", "sigma: reliability vs efficiency", trust.control_mix),
        key!("trust.smoothing", "xi: reputation update speed", trust.smoothing),
        key!("trust.window_slots", "latency window, slots", trust.window_slots),
        key!("trust.initial_reputation", "reputation before any evidence", trust.initial_reputation),
        key!("trust.tolerable_latency", "[lo, hi] per-user tolerable latency, s", trust.tolerable_latency),
        key!("trainer.actor_hidden", "hidden widths of the denoiser", trainer.actor_hidden),
        key!("trainer.critic_hidden", "hidden widths of each critic", trainer.critic_hidden),
        key!("trainer.activation", "identity | tanh | mish", trainer.activation),
        key!("trainer.denoising_steps", "K", trainer.denoising_steps),
        key!("trainer.beta_min", "noise schedule", trainer.beta_min),
        key!("trainer.beta_max", "noise schedule", trainer.beta_max),
        key!("trainer.noise_clamp", "tanh | none, applied to predicted noise", trainer.noise_clamp),
        key!("trainer.gamma", "discount", trainer.gamma),
        key!("trainer.tau", "soft-update rate", trainer.tau),
        key!("trainer.kappa", "confidence sensitivity", trainer.kappa),
        key!("trainer.rho", "consistency-term weight", trainer.rho),
        key!("trainer.actor_lr", "Adam step of the actor", trainer.actor_lr),
        key!("trainer.critic_lr", "Adam step of the critics", trainer.critic_lr),
        key!("trainer.batch_size", "M", trainer.batch_size),
        key!("trainer.epochs", "E", trainer.epochs),
        key!("trainer.gradient_steps", "optimizer steps per epoch", trainer.gradient_steps),
        key!("trainer.trajectories_per_epoch", "episodes collected per epoch", trainer.trajectories_per_epoch),
        key!("trainer.buffer_capacity", "replay capacity", trainer.buffer_capacity),
        key!("trainer.reward_scale", "reward multiplier inside TD targets", trainer.reward_scale),
        key!("trainer.actor_critic", "first | min: critic scoring generated actions", trainer.actor_critic),
        key!("trainer.confidence_gradient", "differentiate through the confidence weight", trainer.confidence_gradient),
        key!("experiment.modes", "any of cgdm, no-con, no-dc, gdm, random", modes),
        key!("experiment.seeds", "one run per seed", seeds),
        key!("experiment.eval_episodes", "episodes per test-reward point", eval_episodes),
        key!("experiment.final_window", "trailing epochs in final_test_reward", final_window),
        key!("experiment.out_dir", "output directory", out_dir),
        key!("experiment.sweep_axis", "\"\" or data-size | bandwidth | compute | attack-frequency | denoising-steps", sweep_axis),
        key!("experiment.sweep_values", "values of the swept quantity", sweep_values),
        key!("experiment.allow_out_of_range", "accept sweep values outside the default ranges", allow_out_of_range),
        key!("experiment.checkpoint_every", "epochs between checkpoints; 0 = final only", checkpoint_every),
        key!("experiment.trace_reputation", "log a per-slot reputation trace per run", trace_reputation),
        key!("experiment.eval_policy", "random | stay | actor (evaluate verb)", eval_policy),
        key!("experiment.policy_checkpoint", "checkpoint for eval_policy = actor", policy_checkpoint),
    ];
    KEYS
}

pub fn find_key(name: &str) -> Option<&'static Key> {
    keys().iter().find(|k| k.name == name)
}

fn flatten(prefix: &str, table: &Table, out: &mut Vec<(String, Value)>) {
    for (k, v) in table {
        let path = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Table(t) => flatten(&path, t, out),
            other => out.push((path, other.clone())),
        }
    }
}

/// Flattened `(dotted key, value)` pairs of a document.
pub fn parse_document(text: &str) -> Result<Vec<(String, Value)>, HarnessError> {
    let table: Table = text.parse().map_err(|e: toml::de::Error| HarnessError::Parse(e.to_string()))?;
    let mut pairs = Vec::new();
    flatten("", &table, &mut pairs);
    Ok(pairs)
}

impl ExperimentConfig {
    /// Defaults overridden by the given pairs, then validated.
    pub fn from_pairs(pairs: &[(String, Value)]) -> Result<Self, HarnessError> {
        let mut cfg = ExperimentConfig::default();
        for (name, value) in pairs {
            let key = find_key(name).ok_or_else(|| HarnessError::UnknownKey(name.clone()))?;
            key.assign(&mut cfg, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        ExperimentConfig::from_pairs(&parse_document(text)?)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let cfg_err = |key: &str, message: String| HarnessError::Config {
            key: key.into(),
            message,
        };
        // section validators lead their messages with the field name
        let locate = |section: &str, message: String| {
            let field = message.split_whitespace().next().unwrap_or("");
            let full = format!("{section}.{field}");
            let key = if find_key(&full).is_some() { full } else { section.into() };
            HarnessError::Config { key, message }
        };
        self.world.validate().map_err(|e| locate("world", strip(e.to_string())))?;
        self.trust.validate().map_err(|e| locate("trust", strip(e.to_string())))?;
        self.trainer.validate().map_err(|e| locate("trainer", strip(e.to_string())))?;
        for (name, p) in [
            ("world.raw_data_fraction", self.world.raw_data_fraction),
            ("world.compute_load_fraction", self.world.compute_load_fraction),
            ("world.result_data_fraction", self.world.result_data_fraction),
        ] {
            if !(p > 0.0 && p.is_finite()) {
                return Err(cfg_err(name, format!("must be > 0, got {p}")));
            }
        }
        for (name, p) in [
            ("world.base_packet_loss", self.world.base_packet_loss),
            ("world.attack_packet_loss", self.world.attack_packet_loss),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(cfg_err(name, format!("must lie in [0, 1], got {p}")));
            }
        }
        if self.trainer.epochs == 0 {
            return Err(cfg_err("trainer.epochs", "must be >= 1".into()));
        }
        if self.modes.is_empty() {
            return Err(cfg_err("experiment.modes", "must list at least one mode".into()));
        }
        if self.seeds.is_empty() {
            return Err(cfg_err("experiment.seeds", "must list at least one seed".into()));
        }
        if self.seeds.iter().any(|&s| s > i64::MAX as u64) || self.world.seed > i64::MAX as u64 {
            return Err(cfg_err("experiment.seeds", "seeds must fit in a signed 64-bit integer".into()));
        }
        if self.eval_episodes == 0 {
            return Err(cfg_err("experiment.eval_episodes", "must be >= 1".into()));
        }
        if self.final_window == 0 {
            return Err(cfg_err("experiment.final_window", "must be >= 1".into()));
        }
        match self.sweep_axis {
            None if !self.sweep_values.is_empty() => {
                return Err(cfg_err(
                    "experiment.sweep_values",
                    "values given without experiment.sweep_axis".into(),
                ));
            }
            None => {}
            Some(axis) => {
                if self.sweep_values.is_empty() {
                    return Err(cfg_err("experiment.sweep_values", format!("{} sweep has no values", axis.name())));
                }
                let (lo, hi) = axis.range();
                for &v in &self.sweep_values {
                    if !v.is_finite() {
                        return Err(cfg_err("experiment.sweep_values", format!("{v} is not finite")));
                    }
                    if axis == SweepAxis::DenoisingSteps && (v < 1.0 || v.fract() != 0.0) {
                        return Err(cfg_err(
                            "experiment.sweep_values",
                            format!("denoising steps must be positive integers, got {v}"),
                        ));
                    }
                    if !self.allow_out_of_range && !(lo..=hi).contains(&v) {
                        return Err(cfg_err(
                            "experiment.sweep_values",
                            format!(
                                "{v} lies outside the {} range [{lo}, {hi}]; set experiment.allow_out_of_range to override",
                                axis.name()
                            ),
                        ));
                    }
                }
                for &v in &self.sweep_values {
                    let mut cell = self.clone();
                    cell.sweep_axis = None;
                    cell.sweep_values.clear();
                    axis.apply(v, &mut cell);
                    cell.validate()?;
                }
            }
        }
        if self.eval_policy == EvalPolicy::Actor && self.policy_checkpoint.as_os_str().is_empty() {
            return Err(cfg_err(
                "experiment.policy_checkpoint",
                "eval_policy = \"actor\" needs a checkpoint path".into(),
            ));
        }
        Ok(())
    }

    /// Every key with its resolved value, one `key = value` line each.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for k in keys() {
            let _ = writeln!(out, "{} = {}", k.name, k.value(self));
        }
        out
    }

    /// Hex SHA-256 of [`render`](Self::render).
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.render().as_bytes()))
    }

    /// World and trainer settings of one sweep cell.
    pub fn cell(&self, sweep: Option<(SweepAxis, f64)>) -> ExperimentConfig {
        let mut cfg = self.clone();
        if let Some((axis, v)) = sweep {
            axis.apply(v, &mut cfg);
        }
        cfg
    }
}

/// Drops the "invalid ... configuration: " prefix of section errors.
fn strip(message: String) -> String {
    match message.split_once(": ") {
        Some((_, rest)) => rest.to_string(),
        None => message,
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    ExperimentConfig::parse(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_reference_setting() {
        let c = ExperimentConfig::default();
        assert_eq!((c.world.num_vehicles, c.world.num_rsus), (8, 4));
        assert_eq!(c.trainer.epochs, 200);
        assert_eq!(c.trainer.denoising_steps, 5);
        assert_eq!(c.trainer.gamma, 0.95);
        assert_eq!(c.trainer.tau, 0.005);
        assert_eq!(c.trust.smoothing, 0.7);
        assert_eq!(c.trust.weights, [0.33; 3]);
        assert_eq!(c.trainer.batch_size, 256);
        assert_eq!(c.trainer.buffer_capacity, 1_000_000);
        assert_eq!((c.trainer.actor_lr, c.trainer.critic_lr), (1e-4, 1e-3));
        assert_eq!(c.world.cpu_speed, UniformRange::new(1e8, 3e8));
        assert_eq!(c.world.data_size, UniformRange::new(100.0, 600.0));
        assert_eq!(c.world.uplink_bandwidth, UniformRange::new(100.0, 300.0));
        c.validate().unwrap();
    }

    #[test]
    fn empty_document_yields_defaults() {
        assert_eq!(ExperimentConfig::parse("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn dotted_and_sectioned_keys_agree() {
        let a = ExperimentConfig::parse("world.num_vehicles = 6\ntrainer.kappa = 0.5").unwrap();
        let b = ExperimentConfig::parse("[world]\nnum_vehicles = 6\n[trainer]\nkappa = 0.5").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.world.num_vehicles, 6);
        assert_eq!(a.trainer.kappa, 0.5);
    }

    #[test]
    fn unknown_key_is_named() {
        match ExperimentConfig::parse("world.num_vehicle = 6") {
            Err(HarnessError::UnknownKey(k)) => assert_eq!(k, "world.num_vehicle"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn out_of_range_attack_frequency_is_rejected_with_its_key() {
        match ExperimentConfig::parse("world.attack_frequency = 1.5") {
            Err(HarnessError::Config { key, .. }) => assert_eq!(key, "world.attack_frequency"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_type_is_rejected_with_its_key() {
        match ExperimentConfig::parse("trainer.batch_size = \"big\"") {
            Err(HarnessError::Config { key, .. }) => assert_eq!(key, "trainer.batch_size"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_seed_list_is_rejected() {
        assert!(matches!(
            ExperimentConfig::parse("experiment.seeds = []"),
            Err(HarnessError::Config { .. })
        ));
    }

    #[test]
    fn sweep_values_are_range_checked_unless_overridden() {
        let text = "experiment.sweep_axis = \"bandwidth\"\nexperiment.sweep_values = [100, 500]";
        assert!(ExperimentConfig::parse(text).is_err());
        let cfg = ExperimentConfig::parse(&format!("{text}\nexperiment.allow_out_of_range = true")).unwrap();
        assert_eq!(cfg.sweep_values, vec![100.0, 500.0]);
        assert!(ExperimentConfig::parse("experiment.sweep_axis = \"denoising-steps\"\nexperiment.sweep_values = [2.5]").is_err());
        assert!(ExperimentConfig::parse("experiment.sweep_values = [1]").is_err());
    }

    #[test]
    fn rendering_round_trips() {
        let mut cfg = ExperimentConfig::default();
        cfg.world.noise_power = 1.234e-13;
        cfg.world.rsu_positions = vec![[1.0, 2.0], [3.0, 4.5], [5.0, 6.0], [7.0, 8.0]];
        cfg.modes = RunMode::ablation();
        cfg.sweep_axis = Some(SweepAxis::Compute);
        cfg.sweep_values = vec![1e8, 2.5e8];
        let back = ExperimentConfig::parse(&cfg.render()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.content_hash(), cfg.content_hash());
    }

    #[test]
    fn every_key_is_listed_once() {
        let mut names: Vec<_> = keys().iter().map(|k| k.name).collect();
        names.sort();
        let n = names.len();
        names.dedup();
        assert_eq!(names.len(), n);
        assert_eq!(ExperimentConfig::default().render().lines().count(), n);
    }
}
