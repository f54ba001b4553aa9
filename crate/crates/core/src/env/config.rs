use rand::Rng;

use super::EnvError;

/// Closed interval sampled uniformly; `lo == hi` yields the constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformRange {
    pub lo: f64,
    pub hi: f64,
}

impl UniformRange {
    pub const fn new(lo: f64, hi: f64) -> Self {
        UniformRange { lo, hi }
    }

    pub const fn constant(value: f64) -> Self {
        UniformRange { lo: value, hi: value }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..=self.hi)
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        UniformRange::new(self.lo * factor, self.hi * factor)
    }

    pub fn is_valid_positive(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo > 0.0 && self.lo <= self.hi
    }
}

/// Static description of the simulated world.
///
/// Bandwidths are in Mbit/s, data sizes in Mbit, CPU speeds in cycles/s,
/// powers in W, latencies in s, distances in m.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    pub num_vehicles: usize,
    pub num_rsus: usize,
    /// Side length of the square map.
    pub map_extent: f64,
    /// Empty means a uniform grid over the map.
    pub rsu_positions: Vec<[f64; 2]>,
    pub rsu_coverage_radius: f64,
    pub carrier_frequency: f64,
    pub channel_gain_coeff: f64,
    pub light_speed: f64,
    pub uplink_bandwidth: UniformRange,
    pub downlink_bandwidth: UniformRange,
    pub inter_rsu_bandwidth: f64,
    pub vehicle_tx_power: f64,
    pub noise_power: f64,
    pub cycles_per_bit: f64,
    pub cpu_speed: UniformRange,
    /// `None` means `ceil(2V / S)`.
    pub rsu_max_load: Option<usize>,
    pub mtd_latency: f64,
    pub attack_frequency: f64,
    pub attack_targets: Vec<usize>,
    pub attack_degradation: f64,
    pub episode_length: usize,
    pub reputation_threshold: f64,
    pub slot_duration: f64,
    pub vehicle_speed: UniformRange,
    /// Range of the agent construction data `D^con`.
    pub data_size: UniformRange,
    pub raw_data_fraction: f64,
    pub compute_load_fraction: f64,
    pub result_data_fraction: f64,
    /// Beacon packets each in-coverage vehicle exchanges with an RSU per slot,
    /// in each direction.
    pub beacon_packets: u64,
    pub base_packet_loss: f64,
    pub attack_packet_loss: f64,
    /// Seeds RSU hardware and per-user tolerances; episodes are seeded separately.
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            num_vehicles: 8,
            num_rsus: 4,
            map_extent: 1000.0,
            rsu_positions: Vec::new(),
            rsu_coverage_radius: 600.0,
            carrier_frequency: 5.9e9,
            channel_gain_coeff: 1.0,
            light_speed: 3.0e8,
            uplink_bandwidth: UniformRange::new(100.0, 300.0),
            downlink_bandwidth: UniformRange::new(100.0, 300.0),
            inter_rsu_bandwidth: 500.0,
            vehicle_tx_power: 0.2,
            noise_power: 1e-13,
            cycles_per_bit: 0.25,
            cpu_speed: UniformRange::new(1.0e8, 3.0e8),
            rsu_max_load: None,
            mtd_latency: 0.5,
            attack_frequency: 0.3,
            attack_targets: vec![0],
            attack_degradation: 0.2,
            episode_length: 100,
            reputation_threshold: 0.5,
            slot_duration: 1.0,
            vehicle_speed: UniformRange::new(10.0, 20.0),
            data_size: UniformRange::new(100.0, 600.0),
            raw_data_fraction: 0.2,
            compute_load_fraction: 0.5,
            result_data_fraction: 0.05,
            beacon_packets: 20,
            base_packet_loss: 0.02,
            attack_packet_loss: 0.9,
            seed: 7,
        }
    }
}

impl WorldConfig {
    pub fn max_load(&self) -> usize {
        self.rsu_max_load
            .unwrap_or_else(|| (2 * self.num_vehicles).div_ceil(self.num_rsus))
    }

    /// RSU coordinates: the configured list, or a near-square grid whose
    /// cells tile the map.
    pub fn resolved_rsu_positions(&self) -> Vec<[f64; 2]> {
        if !self.rsu_positions.is_empty() {
            return self.rsu_positions.clone();
        }
        let cols = (self.num_rsus as f64).sqrt().ceil() as usize;
        let rows = self.num_rsus.div_ceil(cols);
        (0..self.num_rsus)
            .map(|i| {
                let (r, c) = (i / cols, i % cols);
                [
                    (c as f64 + 0.5) * self.map_extent / cols as f64,
                    (r as f64 + 0.5) * self.map_extent / rows as f64,
                ]
            })
            .collect()
    }

    pub fn observation_dim(&self) -> usize {
        let (v, s) = (self.num_vehicles, self.num_rsus);
        2 * v + v * s + s + v * s
    }

    pub fn action_dim(&self) -> usize {
        let (v, s) = (self.num_vehicles, self.num_rsus);
        2 * v * s + s
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |msg: String| Err(EnvError::InvalidConfig(msg));
        if self.num_vehicles < 1 {
            return bad("num_vehicles must be >= 1".into());
        }
        if self.num_rsus < 2 {
            return bad("num_rsus must be >= 2".into());
        }
        let positives = [
            ("map_extent", self.map_extent),
            ("rsu_coverage_radius", self.rsu_coverage_radius),
            ("carrier_frequency", self.carrier_frequency),
            ("channel_gain_coeff", self.channel_gain_coeff),
            ("light_speed", self.light_speed),
            ("inter_rsu_bandwidth", self.inter_rsu_bandwidth),
            ("vehicle_tx_power", self.vehicle_tx_power),
            ("noise_power", self.noise_power),
            ("cycles_per_bit", self.cycles_per_bit),
            ("slot_duration", self.slot_duration),
        ];
        for (name, value) in positives {
            if !(value.is_finite() && value > 0.0) {
                return bad(format!("{name} must be finite and > 0, got {value}"));
            }
        }
        let ranges = [
            ("uplink_bandwidth", self.uplink_bandwidth),
            ("downlink_bandwidth", self.downlink_bandwidth),
            ("cpu_speed", self.cpu_speed),
            ("vehicle_speed", self.vehicle_speed),
            ("data_size", self.data_size),
        ];
        for (name, r) in ranges {
            if !r.is_valid_positive() {
                return bad(format!("{name} must satisfy 0 < lo <= hi, got [{}, {}]", r.lo, r.hi));
            }
        }
        if !(self.mtd_latency.is_finite() && self.mtd_latency >= 0.0) {
            return bad(format!("mtd_latency must be >= 0, got {}", self.mtd_latency));
        }
        if !(0.0..=1.0).contains(&self.attack_frequency) {
            return bad(format!("attack_frequency must lie in [0, 1], got {}", self.attack_frequency));
        }
        if !(self.attack_degradation > 0.0 && self.attack_degradation <= 1.0) {
            return bad(format!(
                "attack_degradation must lie in (0, 1], got {}",
                self.attack_degradation
            ));
        }
        if let Some(&s) = self.attack_targets.iter().find(|&&s| s >= self.num_rsus) {
            return bad(format!("attack target {s} is not an RSU index"));
        }
        if !(self.reputation_threshold > 0.0 && self.reputation_threshold < 1.0) {
            return bad(format!(
                "reputation_threshold must lie in (0, 1), got {}",
                self.reputation_threshold
            ));
        }
        if self.episode_length == 0 {
            return bad("episode_length must be >= 1".into());
        }
        if self.max_load() == 0 || self.max_load() * self.num_rsus < self.num_vehicles {
            return bad(format!(
                "rsu_max_load {} cannot host {} vehicles on {} RSUs",
                self.max_load(),
                self.num_vehicles,
                self.num_rsus
            ));
        }
        if !self.rsu_positions.is_empty() && self.rsu_positions.len() != self.num_rsus {
            return bad(format!(
                "rsu_positions lists {} RSUs, expected {}",
                self.rsu_positions.len(),
                self.num_rsus
            ));
        }
        for (name, f) in [
            ("raw_data_fraction", self.raw_data_fraction),
            ("compute_load_fraction", self.compute_load_fraction),
            ("result_data_fraction", self.result_data_fraction),
        ] {
            if !(f.is_finite() && f > 0.0) {
                return bad(format!("{name} must be > 0, got {f}"));
            }
        }
        for (name, p) in [
            ("base_packet_loss", self.base_packet_loss),
            ("attack_packet_loss", self.attack_packet_loss),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        Ok(())
    }
}
