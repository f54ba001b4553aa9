use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

use super::action::{decode_action, DecodedAction};
use super::latency::{channel_gain, latency_breakdown, link_rate, reward, LatencyBreakdown, LatencyInputs};
use super::{EnvError, WorldConfig};
use crate::trust::{PacketCounts, TrustConfig, TrustEngine, TrustEvent};

/// Vehicle-RSU distances below this are clamped before the path-loss model.
pub const MIN_DISTANCE: f64 = 1.0;

/// Fixed per-RSU hardware, drawn once per world.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RsuProfile {
    pub position: [f64; 2],
    pub cpu_speed: f64,
    pub uplink_bandwidth: f64,
    pub downlink_bandwidth: f64,
}

/// Per-episode data volumes of one vehicle's agent, in Mbit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentData {
    pub con: f64,
    pub raw: f64,
    pub com: f64,
    pub res: f64,
}

/// Simulator ground truth for the current slot.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub slot: usize,
    pub positions: Vec<[f64; 2]>,
    pub speeds: Vec<f64>,
    pub waypoints: Vec<[f64; 2]>,
    /// Hosting RSU per vehicle.
    pub hosted: Vec<usize>,
    /// Row-major `V × S`: whether the RSU holds the vehicle's agent.
    pub replicas: Vec<bool>,
    pub loads: Vec<usize>,
    /// Attack and MTD flags of the most recent slot.
    pub attacked: Vec<bool>,
    pub mtd: Vec<bool>,
    pub data: Vec<AgentData>,
}

impl WorldState {
    pub fn has_replica(&self, vehicle: usize, rsu: usize) -> bool {
        self.replicas[vehicle * self.loads.len() + rsu]
    }
}

/// Result of one environment transition.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub breakdowns: Vec<LatencyBreakdown>,
    pub decoded: DecodedAction,
    pub attacked: Vec<bool>,
    pub done: bool,
}

/// Discrete-time vehicular environment with its trust engine.
#[derive(Debug, Clone)]
pub struct Env {
    cfg: WorldConfig,
    rsus: Vec<RsuProfile>,
    trust: TrustEngine,
    state: WorldState,
    rng: ChaCha8Rng,
    constraint_violations: u64,
    done: bool,
}

impl Env {
    pub fn new(cfg: WorldConfig, trust_cfg: TrustConfig) -> Result<Self, EnvError> {
        cfg.validate()?;
        let mut hw_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let rsus = cfg
            .resolved_rsu_positions()
            .into_iter()
            .map(|position| RsuProfile {
                position,
                cpu_speed: cfg.cpu_speed.sample(&mut hw_rng),
                uplink_bandwidth: cfg.uplink_bandwidth.sample(&mut hw_rng),
                downlink_bandwidth: cfg.downlink_bandwidth.sample(&mut hw_rng),
            })
            .collect();
        let tolerances = TrustEngine::sample_tolerances(&trust_cfg, cfg.num_vehicles, &mut hw_rng);
        let trust = TrustEngine::new(trust_cfg, cfg.num_vehicles, cfg.num_rsus, tolerances)?;
        let mut env = Env {
            state: WorldState {
                slot: 0,
                positions: Vec::new(),
                speeds: Vec::new(),
                waypoints: Vec::new(),
                hosted: Vec::new(),
                replicas: Vec::new(),
                loads: Vec::new(),
                attacked: Vec::new(),
                mtd: Vec::new(),
                data: Vec::new(),
            },
            rng: ChaCha8Rng::seed_from_u64(0),
            rsus,
            trust,
            cfg,
            constraint_violations: 0,
            done: true,
        };
        env.reset(0)?;
        Ok(env)
    }

    pub fn config(&self) -> &WorldConfig {
        &self.cfg
    }

    pub fn rsus(&self) -> &[RsuProfile] {
        &self.rsus
    }

    pub fn trust(&self) -> &TrustEngine {
        &self.trust
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn observation_dim(&self) -> usize {
        self.cfg.observation_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.cfg.action_dim()
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Fallback decisions taken since construction.
    pub fn constraint_violations(&self) -> u64 {
        self.constraint_violations
    }

    /// Starts a new episode; returns the first observation.
    pub fn reset(&mut self, seed: u64) -> Result<Vec<f64>, EnvError> {
        let cfg = &self.cfg;
        let (nv, ns) = (cfg.num_vehicles, cfg.num_rsus);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let extent = cfg.map_extent;
        let point = |rng: &mut ChaCha8Rng| [rng.random_range(0.0..extent), rng.random_range(0.0..extent)];

        let mut positions = Vec::with_capacity(nv);
        let mut waypoints = Vec::with_capacity(nv);
        let mut speeds = Vec::with_capacity(nv);
        let mut data = Vec::with_capacity(nv);
        for _ in 0..nv {
            positions.push(point(&mut rng));
            waypoints.push(point(&mut rng));
            speeds.push(cfg.vehicle_speed.sample(&mut rng));
            data.push(AgentData {
                con: cfg.data_size.sample(&mut rng),
                raw: cfg.data_size.scaled(cfg.raw_data_fraction).sample(&mut rng),
                com: cfg.data_size.scaled(cfg.compute_load_fraction).sample(&mut rng),
                res: cfg.data_size.scaled(cfg.result_data_fraction).sample(&mut rng),
            });
        }

        // initial deployment on the nearest RSU with spare capacity
        let max_load = cfg.max_load();
        let mut loads = vec![0usize; ns];
        let mut hosted = Vec::with_capacity(nv);
        for p in &positions {
            let mut order: Vec<usize> = (0..ns).collect();
            order.sort_by(|&a, &b| {
                distance(p, &self.rsus[a].position).total_cmp(&distance(p, &self.rsus[b].position))
            });
            let s = order
                .into_iter()
                .find(|&s| loads[s] < max_load)
                .ok_or(EnvError::CapacityExhausted)?;
            loads[s] += 1;
            hosted.push(s);
        }

        self.state = WorldState {
            slot: 0,
            positions,
            speeds,
            waypoints,
            hosted,
            replicas: vec![false; nv * ns],
            loads,
            attacked: vec![false; ns],
            mtd: vec![false; ns],
            data,
        };
        self.rng = rng;
        self.trust.reset()?;
        self.done = false;
        Ok(self.observation())
    }

    /// Flattened observation: positions, one-hot hosts, loads, reputations.
    pub fn observation(&self) -> Vec<f64> {
        let cfg = &self.cfg;
        let (nv, ns) = (cfg.num_vehicles, cfg.num_rsus);
        let mut obs = Vec::with_capacity(cfg.observation_dim());
        for p in &self.state.positions {
            obs.push((p[0] / cfg.map_extent).clamp(0.0, 1.0));
            obs.push((p[1] / cfg.map_extent).clamp(0.0, 1.0));
        }
        for v in 0..nv {
            for s in 0..ns {
                obs.push(if self.state.hosted[v] == s { 1.0 } else { 0.0 });
            }
        }
        let max_load = cfg.max_load() as f64;
        obs.extend(self.state.loads.iter().map(|&l| l as f64 / max_load));
        obs.extend(self.trust.reputation_matrix().iter().copied());
        obs
    }

    fn degraded(&self, rsu: usize, attacked: &[bool], mtd: &[bool]) -> bool {
        attacked[rsu] && !mtd[rsu]
    }

    /// Latency inputs of vehicle `v` for this slot given the decoded action.
    pub fn latency_inputs(
        &self,
        v: usize,
        decoded: &DecodedAction,
        attacked: &[bool],
    ) -> Result<LatencyInputs, EnvError> {
        let cfg = &self.cfg;
        let s = self.state.hosted[v];
        let target = decoded.targets[v];
        let rsu = &self.rsus[s];
        let factor = if self.degraded(s, attacked, &decoded.mtd) {
            cfg.attack_degradation
        } else {
            1.0
        };
        let d = distance(&self.state.positions[v], &rsu.position).max(MIN_DISTANCE);
        let gain = channel_gain(d, cfg)?;
        let up = link_rate(rsu.uplink_bandwidth * factor, cfg.vehicle_tx_power, gain, cfg.noise_power)?;
        let down = link_rate(rsu.downlink_bandwidth * factor, cfg.vehicle_tx_power, gain, cfg.noise_power)?;
        let migration_bandwidth = (target != s).then(|| {
            if self.degraded(s, attacked, &decoded.mtd) || self.degraded(target, attacked, &decoded.mtd) {
                cfg.inter_rsu_bandwidth * cfg.attack_degradation
            } else {
                cfg.inter_rsu_bandwidth
            }
        });
        let data = self.state.data[v];
        Ok(LatencyInputs {
            con_data: data.con,
            raw_data: data.raw,
            compute_load: data.com,
            result_data: data.res,
            uplink_rate: up,
            downlink_rate: down,
            cycles_per_bit: cfg.cycles_per_bit,
            cpu_speed: rsu.cpu_speed * factor,
            allocation: decoded.allocation[v],
            migration_bandwidth,
            replica: self.state.has_replica(v, s),
            mtd: decoded.mtd[s],
            mtd_latency: cfg.mtd_latency,
        })
    }

    pub fn step(&mut self, raw_action: &[f64]) -> Result<StepOutcome, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeEnded);
        }
        let (nv, ns) = (self.cfg.num_vehicles, self.cfg.num_rsus);
        let decoded = decode_action(
            raw_action,
            &self.state.hosted,
            self.trust.reputation_matrix(),
            &self.cfg,
        )?;
        self.constraint_violations += decoded.fallbacks.len() as u64;

        let mut attacked = vec![false; ns];
        for &s in &self.cfg.attack_targets {
            attacked[s] = self.rng.random_bool(self.cfg.attack_frequency);
        }

        let mut breakdowns = Vec::with_capacity(nv);
        for v in 0..nv {
            breakdowns.push(latency_breakdown(&self.latency_inputs(v, &decoded, &attacked)?)?);
        }
        let totals: Vec<f64> = breakdowns.iter().map(|b| b.total).collect();
        let r = reward(&totals);

        self.feed_trust(&decoded, &attacked, &totals)?;

        // pre-migration
        for v in 0..nv {
            let (s, target) = (self.state.hosted[v], decoded.targets[v]);
            if target != s {
                self.state.replicas[v * ns + s] = false;
                self.state.replicas[v * ns + target] = !self.degraded(target, &attacked, &decoded.mtd);
                self.state.hosted[v] = target;
            } else if !self.degraded(s, &attacked, &decoded.mtd) {
                self.state.replicas[v * ns + s] = true;
            }
        }
        self.state.loads = decoded.next_loads.clone();
        self.state.attacked = attacked.clone();
        self.state.mtd = decoded.mtd.clone();
        self.advance_vehicles();

        self.state.slot += 1;
        self.done = self.state.slot >= self.cfg.episode_length;
        Ok(StepOutcome {
            observation: self.observation(),
            reward: r,
            breakdowns,
            decoded,
            attacked,
            done: self.done,
        })
    }

    fn feed_trust(&mut self, decoded: &DecodedAction, attacked: &[bool], totals: &[f64]) -> Result<(), EnvError> {
        let cfg = &self.cfg;
        let slot = self.state.slot as u64;
        self.trust.advance_to(slot);
        for s in 0..cfg.num_rsus {
            let pos = self.rsus[s].position;
            let in_range = self
                .state
                .positions
                .iter()
                .filter(|p| distance(p, &pos) <= cfg.rsu_coverage_radius)
                .count() as u64;
            let packets = in_range * cfg.beacon_packets;
            if packets == 0 {
                continue;
            }
            let loss = if self.degraded(s, attacked, &decoded.mtd) {
                cfg.attack_packet_loss
            } else {
                cfg.base_packet_loss
            };
            let failures = Binomial::new(packets, loss).map_err(|e| EnvError::InvalidArgument(e.to_string()))?;
            let received_failed = failures.sample(&mut self.rng);
            let forwarded_failed = failures.sample(&mut self.rng);
            self.trust.record(TrustEvent::Beacon {
                rsu: s,
                packets: PacketCounts {
                    received_ok: packets - received_failed,
                    received_failed,
                    forwarded_ok: packets - forwarded_failed,
                    forwarded_failed,
                },
            })?;
        }
        for (v, &total) in totals.iter().enumerate() {
            let s = self.state.hosted[v];
            let disrupted = self.degraded(s, attacked, &decoded.mtd);
            let positive = !disrupted && total <= self.trust.tolerable_latency()[v];
            self.trust.record(TrustEvent::Evaluation {
                user: v,
                rsu: s,
                positive,
            })?;
            self.trust.record(TrustEvent::Latency { rsu: s, slot, total })?;
        }
        self.trust.update_reputations()?;
        Ok(())
    }

    /// Moves every vehicle along its waypoint path for one slot.
    fn advance_vehicles(&mut self) {
        let extent = self.cfg.map_extent;
        for v in 0..self.cfg.num_vehicles {
            let mut budget = self.state.speeds[v] * self.cfg.slot_duration;
            let mut pos = self.state.positions[v];
            let mut wp = self.state.waypoints[v];
            loop {
                let d = distance(&pos, &wp);
                if d > budget {
                    let f = budget / d;
                    pos = [pos[0] + f * (wp[0] - pos[0]), pos[1] + f * (wp[1] - pos[1])];
                    break;
                }
                budget -= d;
                pos = wp;
                wp = [self.rng.random_range(0.0..extent), self.rng.random_range(0.0..extent)];
            }
            self.state.positions[v] = pos;
            self.state.waypoints[v] = wp;
        }
    }
}

pub fn distance(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}
