use std::collections::VecDeque;

use super::TrustError;

/// Packet counters reported in beacons for one RSU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PacketCounts {
    pub received_ok: u64,
    pub received_failed: u64,
    pub forwarded_ok: u64,
    pub forwarded_failed: u64,
}

#[derive(Debug, Clone, PartialEq)]
struct SlotSamples {
    slot: u64,
    totals: Vec<f64>,
}

/// Beacon packet statistics and windowed latency samples per RSU.
#[derive(Debug, Clone, PartialEq)]
pub struct BeaconStats {
    counts: Vec<PacketCounts>,
    windows: Vec<VecDeque<SlotSamples>>,
    window_slots: usize,
    current_slot: u64,
}

impl BeaconStats {
    pub fn new(rsus: usize, window_slots: usize) -> Result<Self, TrustError> {
        if window_slots == 0 {
            return Err(TrustError::InvalidParameter("window length must be >= 1".into()));
        }
        Ok(BeaconStats {
            counts: vec![PacketCounts::default(); rsus],
            windows: vec![VecDeque::new(); rsus],
            window_slots,
            current_slot: 0,
        })
    }

    pub fn window_slots(&self) -> usize {
        self.window_slots
    }

    fn check(&self, rsu: usize) -> Result<(), TrustError> {
        if rsu >= self.counts.len() {
            Err(TrustError::UnknownRsu(rsu))
        } else {
            Ok(())
        }
    }

    pub fn counts(&self, rsu: usize) -> Result<PacketCounts, TrustError> {
        self.check(rsu)?;
        Ok(self.counts[rsu])
    }

    pub fn add_packets(&mut self, rsu: usize, delta: PacketCounts) -> Result<(), TrustError> {
        self.check(rsu)?;
        let c = &mut self.counts[rsu];
        c.received_ok += delta.received_ok;
        c.received_failed += delta.received_failed;
        c.forwarded_ok += delta.forwarded_ok;
        c.forwarded_failed += delta.forwarded_failed;
        Ok(())
    }

    /// Moves the window forward to `slot`, dropping samples from slots
    /// at or before `slot - window`.
    pub fn advance_to(&mut self, slot: u64) {
        if slot > self.current_slot {
            self.current_slot = slot;
        }
        let oldest_kept = self.current_slot.saturating_sub(self.window_slots as u64 - 1);
        for w in &mut self.windows {
            while w.front().is_some_and(|e| e.slot < oldest_kept) {
                w.pop_front();
            }
        }
    }

    pub fn add_latency(&mut self, rsu: usize, slot: u64, total: f64) -> Result<(), TrustError> {
        self.check(rsu)?;
        if !total.is_finite() || total < 0.0 {
            return Err(TrustError::InvalidParameter(format!("latency sample {total}")));
        }
        self.advance_to(slot);
        if slot < self.current_slot.saturating_sub(self.window_slots as u64 - 1) {
            return Ok(());
        }
        let w = &mut self.windows[rsu];
        match w.iter_mut().find(|e| e.slot == slot) {
            Some(entry) => entry.totals.push(total),
            None => {
                let pos = w.iter().position(|e| e.slot > slot).unwrap_or(w.len());
                w.insert(
                    pos,
                    SlotSamples {
                        slot,
                        totals: vec![total],
                    },
                );
            }
        }
        Ok(())
    }

    /// Number of slots currently holding samples for `rsu`.
    pub fn window_len(&self, rsu: usize) -> Result<usize, TrustError> {
        self.check(rsu)?;
        Ok(self.windows[rsu].len())
    }

    /// Mean of every latency sample in the window; `None` when empty.
    pub fn mean_latency(&self, rsu: usize) -> Result<Option<f64>, TrustError> {
        self.check(rsu)?;
        let (sum, n) = self.windows[rsu]
            .iter()
            .flat_map(|e| e.totals.iter())
            .fold((0.0, 0usize), |(s, n), &x| (s + x, n + 1));
        Ok(if n == 0 { None } else { Some(sum / n as f64) })
    }

    /// Weighted delivery/forwarding reliability in `[-1, 1]`; `None` when
    /// either direction has no packets.
    pub fn transmission_reliability(&self, rsu: usize, lambda: f64) -> Result<Option<f64>, TrustError> {
        let c = self.counts(rsu)?;
        Ok(transmission_reliability(&c, lambda))
    }

    /// `max(0, 1 - mean / T^max)`, or 0.5 without samples.
    pub fn migration_efficiency(&self, rsu: usize, tolerable_latency: f64) -> Result<f64, TrustError> {
        if !(tolerable_latency > 0.0) {
            return Err(TrustError::InvalidParameter(format!(
                "tolerable latency must be > 0, got {tolerable_latency}"
            )));
        }
        Ok(match self.mean_latency(rsu)? {
            None => EMPTY_WINDOW_EFFICIENCY,
            Some(mean) => migration_efficiency(mean, tolerable_latency),
        })
    }
}

pub const EMPTY_WINDOW_EFFICIENCY: f64 = 0.5;

pub fn transmission_reliability(c: &PacketCounts, lambda: f64) -> Option<f64> {
    let d = c.received_ok + c.received_failed;
    let f = c.forwarded_ok + c.forwarded_failed;
    if d == 0 || f == 0 {
        return None;
    }
    let delivery = (c.received_ok as f64 - c.received_failed as f64) / d as f64;
    let forwarding = (c.forwarded_ok as f64 - c.forwarded_failed as f64) / f as f64;
    Some(lambda * delivery + (1.0 - lambda) * forwarding)
}

pub fn migration_efficiency(mean_latency: f64, tolerable_latency: f64) -> f64 {
    (1.0 - mean_latency / tolerable_latency).max(0.0)
}
