use rand::Rng;

use super::beacon::{BeaconStats, PacketCounts};
use super::ledger::{BetaPrior, EvaluationLedger};
use super::TrustError;

/// Weights of attitude, subjective norm and perceived control.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorWeights {
    pub attitude: f64,
    pub norm: f64,
    pub control: f64,
}

impl FactorWeights {
    /// Rescales to sum exactly one.
    pub fn normalized(attitude: f64, norm: f64, control: f64) -> Result<Self, TrustError> {
        let sum = attitude + norm + control;
        if !(attitude >= 0.0 && norm >= 0.0 && control >= 0.0 && sum > 0.0 && sum.is_finite()) {
            return Err(TrustError::InvalidParameter(format!(
                "factor weights ({attitude}, {norm}, {control}) must be non-negative with positive sum"
            )));
        }
        Ok(FactorWeights {
            attitude: attitude / sum,
            norm: norm / sum,
            control: control / sum,
        })
    }
}

/// `clamp(σ R + (1 - σ) M, 0, 1)`.
pub fn perceived_control(reliability: f64, efficiency: f64, sigma: f64) -> f64 {
    (sigma * reliability + (1.0 - sigma) * efficiency).clamp(0.0, 1.0)
}

/// Weighted TPB intention, used as the reputation of an RSU for a user.
pub fn behavioral_intention(attitude: f64, norm: f64, control: f64, w: &FactorWeights) -> f64 {
    w.attitude * attitude + w.norm * norm + w.control * control
}

/// `ξ near + (1 - ξ) old`.
pub fn smooth_update(old: f64, near: f64, xi: f64) -> f64 {
    xi * near + (1.0 - xi) * old
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrustConfig {
    pub attitude_prior: BetaPrior,
    pub norm_prior: BetaPrior,
    /// Raw weights; normalized before use.
    pub weights: [f64; 3],
    /// Delivery vs forwarding weight `λ`.
    pub reliability_mix: f64,
    /// Reliability vs efficiency weight `σ`.
    pub control_mix: f64,
    /// Update speed `ξ`.
    pub smoothing: f64,
    pub window_slots: usize,
    pub initial_reputation: f64,
    /// Per-user `T^max_u` is drawn from this range, seconds.
    pub tolerable_latency: (f64, f64),
}

impl Default for TrustConfig {
    fn default() -> Self {
        TrustConfig {
            attitude_prior: BetaPrior::UNIFORM,
            norm_prior: BetaPrior::UNIFORM,
            weights: [0.33, 0.33, 0.33],
            reliability_mix: 0.5,
            control_mix: 0.5,
            smoothing: 0.7,
            window_slots: 10,
            initial_reputation: 0.7,
            tolerable_latency: (4.0, 8.0),
        }
    }
}

impl TrustConfig {
    pub fn validate(&self) -> Result<(), TrustError> {
        let open_unit = |name: &str, x: f64| {
            if x > 0.0 && x < 1.0 {
                Ok(())
            } else {
                Err(TrustError::InvalidParameter(format!("{name} must lie in (0, 1), got {x}")))
            }
        };
        open_unit("reliability_mix", self.reliability_mix)?;
        open_unit("control_mix", self.control_mix)?;
        open_unit("smoothing", self.smoothing)?;
        if !self.attitude_prior.is_valid() || !self.norm_prior.is_valid() {
            return Err(TrustError::InvalidParameter("Beta priors must be > 0".into()));
        }
        FactorWeights::normalized(self.weights[0], self.weights[1], self.weights[2])?;
        if self.window_slots == 0 {
            return Err(TrustError::InvalidParameter("window_slots must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.initial_reputation) {
            return Err(TrustError::InvalidParameter(format!(
                "initial_reputation must lie in [0, 1], got {}",
                self.initial_reputation
            )));
        }
        let (lo, hi) = self.tolerable_latency;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(TrustError::InvalidParameter(format!(
                "tolerable_latency range [{lo}, {hi}] must satisfy 0 < lo <= hi"
            )));
        }
        Ok(())
    }
}

/// Evidence fed to the trust engine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrustEvent {
    Evaluation { user: usize, rsu: usize, positive: bool },
    Beacon { rsu: usize, packets: PacketCounts },
    Latency { rsu: usize, slot: u64, total: f64 },
}

/// Per-user factor decomposition of one reputation value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Factors {
    pub attitude: f64,
    pub norm: f64,
    pub reliability: f64,
    pub efficiency: f64,
    pub control: f64,
    pub intention: f64,
}

/// Per-(user, RSU) reputation with its evidence ledgers.
#[derive(Debug, Clone, PartialEq)]
pub struct TrustEngine {
    config: TrustConfig,
    weights: FactorWeights,
    ledger: EvaluationLedger,
    beacons: BeaconStats,
    tolerable_latency: Vec<f64>,
    reputation: Vec<f64>,
    users: usize,
    rsus: usize,
}

impl TrustEngine {
    pub fn new(
        config: TrustConfig,
        users: usize,
        rsus: usize,
        tolerable_latency: Vec<f64>,
    ) -> Result<Self, TrustError> {
        config.validate()?;
        if tolerable_latency.len() != users || tolerable_latency.iter().any(|&t| !(t > 0.0)) {
            return Err(TrustError::InvalidParameter(
                "one positive tolerable latency per user is required".into(),
            ));
        }
        let weights = FactorWeights::normalized(config.weights[0], config.weights[1], config.weights[2])?;
        Ok(TrustEngine {
            ledger: EvaluationLedger::new(users, rsus, config.attitude_prior, config.norm_prior)?,
            beacons: BeaconStats::new(rsus, config.window_slots)?,
            reputation: vec![config.initial_reputation; users * rsus],
            weights,
            tolerable_latency,
            config,
            users,
            rsus,
        })
    }

    /// Draws `T^max_u` for each user from the configured range.
    pub fn sample_tolerances<R: Rng + ?Sized>(config: &TrustConfig, users: usize, rng: &mut R) -> Vec<f64> {
        let (lo, hi) = config.tolerable_latency;
        (0..users)
            .map(|_| if lo == hi { lo } else { rng.random_range(lo..=hi) })
            .collect()
    }

    /// Clears all evidence and restores the initial reputation.
    pub fn reset(&mut self) -> Result<(), TrustError> {
        self.ledger = EvaluationLedger::new(
            self.users,
            self.rsus,
            self.config.attitude_prior,
            self.config.norm_prior,
        )?;
        self.beacons = BeaconStats::new(self.rsus, self.config.window_slots)?;
        self.reputation.fill(self.config.initial_reputation);
        Ok(())
    }

    pub fn config(&self) -> &TrustConfig {
        &self.config
    }

    pub fn weights(&self) -> FactorWeights {
        self.weights
    }

    pub fn ledger(&self) -> &EvaluationLedger {
        &self.ledger
    }

    pub fn beacons(&self) -> &BeaconStats {
        &self.beacons
    }

    pub fn tolerable_latency(&self) -> &[f64] {
        &self.tolerable_latency
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn rsus(&self) -> usize {
        self.rsus
    }

    pub fn record(&mut self, event: TrustEvent) -> Result<(), TrustError> {
        match event {
            TrustEvent::Evaluation {
                user,
                rsu,
                positive,
            } => self.ledger.record(user, rsu, positive),
            TrustEvent::Beacon { rsu, packets } => self.beacons.add_packets(rsu, packets),
            TrustEvent::Latency { rsu, slot, total } => self.beacons.add_latency(rsu, slot, total),
        }
    }

    /// Slides the latency window to `slot`.
    pub fn advance_to(&mut self, slot: u64) {
        self.beacons.advance_to(slot);
    }

    /// Instantaneous factors for `(user, rsu)` from the current evidence.
    pub fn factors(&self, user: usize, rsu: usize) -> Result<Factors, TrustError> {
        let attitude = self.ledger.attitude(user, rsu)?;
        let norm = self.ledger.subjective_norm(user, rsu)?;
        let reliability = self
            .beacons
            .transmission_reliability(rsu, self.config.reliability_mix)?
            .unwrap_or(0.0);
        let efficiency = self
            .beacons
            .migration_efficiency(rsu, self.tolerable_latency[user])?;
        let control = perceived_control(reliability, efficiency, self.config.control_mix);
        Ok(Factors {
            attitude,
            norm,
            reliability,
            efficiency,
            control,
            intention: behavioral_intention(attitude, norm, control, &self.weights),
        })
    }

    /// Smooths every reputation value toward its instantaneous intention.
    pub fn update_reputations(&mut self) -> Result<(), TrustError> {
        for u in 0..self.users {
            for s in 0..self.rsus {
                let near = self.factors(u, s)?.intention;
                let i = u * self.rsus + s;
                self.reputation[i] = smooth_update(self.reputation[i], near, self.config.smoothing);
            }
        }
        Ok(())
    }

    pub fn reputation(&self, user: usize, rsu: usize) -> Result<f64, TrustError> {
        if user >= self.users {
            return Err(TrustError::UnknownUser(user));
        }
        if rsu >= self.rsus {
            return Err(TrustError::UnknownRsu(rsu));
        }
        Ok(self.reputation[user * self.rsus + rsu])
    }

    /// Row-major `users × rsus` reputation matrix.
    pub fn reputation_matrix(&self) -> &[f64] {
        &self.reputation
    }
}
