//! Channel, rate, and per-vehicle latency model.

use super::{EnvError, WorldConfig};

/// Free-space path-loss gain `Γ (c / (4π f d))²`.
pub fn channel_gain(distance: f64, cfg: &WorldConfig) -> Result<f64, EnvError> {
    if !(distance > 0.0) {
        return Err(EnvError::DegenerateGeometry(distance));
    }
    let ratio = cfg.light_speed / (4.0 * std::f64::consts::PI * cfg.carrier_frequency * distance);
    Ok(cfg.channel_gain_coeff * ratio * ratio)
}

/// Shannon rate `B log2(1 + h g / N²)`, in the unit of `bandwidth`.
pub fn link_rate(bandwidth: f64, tx_power: f64, gain: f64, noise: f64) -> Result<f64, EnvError> {
    if !(bandwidth > 0.0 && noise > 0.0 && gain >= 0.0 && tx_power >= 0.0) {
        return Err(EnvError::InvalidArgument(format!(
            "link_rate(bandwidth={bandwidth}, tx_power={tx_power}, gain={gain}, noise={noise})"
        )));
    }
    Ok(bandwidth * (1.0 + tx_power * gain / noise).log2())
}

/// Everything one vehicle's latency depends on in one slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyInputs {
    /// `D^con`, Mbit.
    pub con_data: f64,
    /// `D^raw`, Mbit.
    pub raw_data: f64,
    /// `D^com`, Mbit.
    pub compute_load: f64,
    /// `D^res`, Mbit.
    pub result_data: f64,
    pub uplink_rate: f64,
    pub downlink_rate: f64,
    pub cycles_per_bit: f64,
    /// Effective CPU speed of the hosting RSU, cycles/s.
    pub cpu_speed: f64,
    /// Share of the hosting RSU's CPU, in (0, 1].
    pub allocation: f64,
    /// Inter-RSU bandwidth towards the pre-migration target; `None` when the
    /// agent stays on its current RSU.
    pub migration_bandwidth: Option<f64>,
    /// `ε_s`: the hosting RSU already holds the agent.
    pub replica: bool,
    /// `β_s`: the hosting RSU runs moving target defense this slot.
    pub mtd: bool,
    pub mtd_latency: f64,
}

/// Per-vehicle latency components for one slot, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LatencyBreakdown {
    pub t_uc: f64,
    pub t_dep: f64,
    pub t_um: f64,
    pub t_pro: f64,
    pub t_down: f64,
    pub t_mig: f64,
    pub t_ext: f64,
    pub total: f64,
}

const BITS_PER_MBIT: f64 = 1e6;

pub fn latency_breakdown(inp: &LatencyInputs) -> Result<LatencyBreakdown, EnvError> {
    if !(inp.allocation > 0.0) {
        return Err(EnvError::UnservedVehicle(inp.allocation));
    }
    if !(inp.uplink_rate > 0.0 && inp.downlink_rate > 0.0 && inp.cpu_speed > 0.0) {
        return Err(EnvError::InvalidArgument(format!(
            "non-positive rate or CPU speed in {inp:?}"
        )));
    }
    let cpu_share = inp.allocation * inp.cpu_speed;
    let mut parts = LatencyBreakdown {
        t_uc: inp.con_data / inp.uplink_rate,
        t_dep: inp.cycles_per_bit * inp.con_data * BITS_PER_MBIT / cpu_share,
        t_um: inp.raw_data / inp.uplink_rate,
        t_pro: inp.cycles_per_bit * inp.compute_load * BITS_PER_MBIT / cpu_share,
        t_down: inp.result_data / inp.downlink_rate,
        t_mig: inp.migration_bandwidth.map_or(0.0, |b| inp.con_data / b),
        t_ext: if inp.mtd { inp.mtd_latency } else { 0.0 },
        total: 0.0,
    };
    parts.total = total_latency(&parts, inp.replica, inp.mtd);
    Ok(parts)
}

/// `(1-ε)(t_uc + t_dep) + t_um + t_down + max(t_pro, t_mig) + β t_ext`.
pub fn total_latency(parts: &LatencyBreakdown, replica: bool, mtd: bool) -> f64 {
    let eps = if replica { 1.0 } else { 0.0 };
    let beta = if mtd { 1.0 } else { 0.0 };
    (1.0 - eps) * (parts.t_uc + parts.t_dep)
        + parts.t_um
        + parts.t_down
        + parts.t_pro.max(parts.t_mig)
        + beta * parts.t_ext
}

/// Negated sum of per-vehicle total latencies.
pub fn reward(totals: &[f64]) -> f64 {
    -totals.iter().sum::<f64>()
}
