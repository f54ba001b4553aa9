use super::TrustError;

/// Beta prior hyperparameters for a Bernoulli evaluation rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaPrior {
    pub alpha: f64,
    pub beta: f64,
}

impl BetaPrior {
    pub const UNIFORM: BetaPrior = BetaPrior {
        alpha: 1.0,
        beta: 1.0,
    };

    /// Posterior mean after `positive` successes and `negative` failures.
    pub fn posterior_mean(&self, positive: u64, negative: u64) -> f64 {
        let p = positive as f64;
        let q = negative as f64;
        (self.alpha + p) / (self.alpha + self.beta + p + q)
    }

    pub fn is_valid(&self) -> bool {
        self.alpha > 0.0 && self.beta > 0.0 && self.alpha.is_finite() && self.beta.is_finite()
    }
}

/// Positive/negative interaction counts per (user, RSU).
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationLedger {
    users: usize,
    rsus: usize,
    positive: Vec<u64>,
    negative: Vec<u64>,
    rsu_positive: Vec<u64>,
    rsu_negative: Vec<u64>,
    pub attitude_prior: BetaPrior,
    pub norm_prior: BetaPrior,
}

impl EvaluationLedger {
    pub fn new(
        users: usize,
        rsus: usize,
        attitude_prior: BetaPrior,
        norm_prior: BetaPrior,
    ) -> Result<Self, TrustError> {
        if !attitude_prior.is_valid() || !norm_prior.is_valid() {
            return Err(TrustError::InvalidParameter(
                "Beta priors must be strictly positive".into(),
            ));
        }
        Ok(EvaluationLedger {
            users,
            rsus,
            positive: vec![0; users * rsus],
            negative: vec![0; users * rsus],
            rsu_positive: vec![0; rsus],
            rsu_negative: vec![0; rsus],
            attitude_prior,
            norm_prior,
        })
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn rsus(&self) -> usize {
        self.rsus
    }

    fn index(&self, user: usize, rsu: usize) -> Result<usize, TrustError> {
        if user >= self.users {
            return Err(TrustError::UnknownUser(user));
        }
        if rsu >= self.rsus {
            return Err(TrustError::UnknownRsu(rsu));
        }
        Ok(user * self.rsus + rsu)
    }

    pub fn record(&mut self, user: usize, rsu: usize, positive: bool) -> Result<(), TrustError> {
        let i = self.index(user, rsu)?;
        if positive {
            self.positive[i] += 1;
            self.rsu_positive[rsu] += 1;
        } else {
            self.negative[i] += 1;
            self.rsu_negative[rsu] += 1;
        }
        Ok(())
    }

    /// `(p_{u,s}, q_{u,s})`.
    pub fn counts(&self, user: usize, rsu: usize) -> Result<(u64, u64), TrustError> {
        let i = self.index(user, rsu)?;
        Ok((self.positive[i], self.negative[i]))
    }

    /// Counts from every user except `user`.
    pub fn counts_excluding(&self, user: usize, rsu: usize) -> Result<(u64, u64), TrustError> {
        let (p, q) = self.counts(user, rsu)?;
        Ok((self.rsu_positive[rsu] - p, self.rsu_negative[rsu] - q))
    }

    /// Posterior mean of the user's own positive-evaluation rate.
    pub fn attitude(&self, user: usize, rsu: usize) -> Result<f64, TrustError> {
        let (p, q) = self.counts(user, rsu)?;
        Ok(self.attitude_prior.posterior_mean(p, q))
    }

    /// Posterior mean of the positive-evaluation rate of all other users.
    pub fn subjective_norm(&self, user: usize, rsu: usize) -> Result<f64, TrustError> {
        let (p, q) = self.counts_excluding(user, rsu)?;
        Ok(self.norm_prior.posterior_mean(p, q))
    }
}
