use super::DiffusionError;

/// Variance-preserving schedule with precomputed cumulative products.
///
/// Steps are indexed `1..=K`; `alpha_bar(0)` is the convention value 1.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    posterior_variances: Vec<f64>,
    beta_min: f64,
    beta_max: f64,
}

impl NoiseSchedule {
    /// `β_k = 1 − exp(−β_min/K − (β_max − β_min)(2k − 1)/(2K²))`.
    pub fn new(steps: usize, beta_min: f64, beta_max: f64) -> Result<Self, DiffusionError> {
        if steps == 0 {
            return Err(DiffusionError::InvalidSchedule("K must be at least 1".into()));
        }
        if !(beta_min > 0.0 && beta_max > beta_min && beta_max.is_finite()) {
            return Err(DiffusionError::InvalidSchedule(format!(
                "need 0 < beta_min < beta_max, got {beta_min}, {beta_max}"
            )));
        }
        let kf = steps as f64;
        let mut betas = Vec::with_capacity(steps);
        for k in 1..=steps {
            let exponent = -beta_min / kf - (beta_max - beta_min) * (2.0 * k as f64 - 1.0) / (2.0 * kf * kf);
            let beta = 1.0 - exponent.exp();
            if !(beta > 0.0 && beta < 1.0) {
                return Err(DiffusionError::InvalidSchedule(format!("beta_{k} = {beta} outside (0, 1)")));
            }
            betas.push(beta);
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(steps);
        let mut running = 1.0;
        for a in &alphas {
            running *= a;
            alpha_bars.push(running);
        }
        let mut posterior_variances = Vec::with_capacity(steps);
        for k in 1..=steps {
            let prev = if k == 1 { 1.0 } else { alpha_bars[k - 2] };
            posterior_variances.push((1.0 - prev) / (1.0 - alpha_bars[k - 1]) * betas[k - 1]);
        }
        Ok(NoiseSchedule {
            betas,
            alphas,
            alpha_bars,
            posterior_variances,
            beta_min,
            beta_max,
        })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta_min(&self) -> f64 {
        self.beta_min
    }

    pub fn beta_max(&self) -> f64 {
        self.beta_max
    }

    pub fn beta(&self, k: usize) -> f64 {
        self.betas[k - 1]
    }

    pub fn alpha(&self, k: usize) -> f64 {
        self.alphas[k - 1]
    }

    pub fn alpha_bar(&self, k: usize) -> f64 {
        if k == 0 {
            1.0
        } else {
            self.alpha_bars[k - 1]
        }
    }

    /// `β̃_k`, the variance of the reverse step from `k` to `k − 1`.
    pub fn posterior_variance(&self, k: usize) -> f64 {
        self.posterior_variances[k - 1]
    }

    pub(crate) fn check_step(&self, k: usize) -> Result<(), DiffusionError> {
        if k == 0 || k > self.steps() {
            return Err(DiffusionError::StepOutOfRange { k, max: self.steps() });
        }
        Ok(())
    }
}

/// Closed-form corruption `√ᾱ_k x0 + √(1 − ᾱ_k) ε`.
pub fn forward_sample(x0: &[f64], k: usize, schedule: &NoiseSchedule, eps: &[f64]) -> Vec<f64> {
    let ab = schedule.alpha_bar(k);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect()
}

/// One forward transition `√α_k x_{k−1} + √β_k ε`.
pub fn forward_step(x_prev: &[f64], k: usize, schedule: &NoiseSchedule, eps: &[f64]) -> Vec<f64> {
    let (a, b) = (schedule.alpha(k).sqrt(), schedule.beta(k).sqrt());
    x_prev.iter().zip(eps).map(|(x, e)| a * x + b * e).collect()
}

/// `exp(−κ L)`.
pub fn confidence(loss: f64, kappa: f64) -> f64 {
    (-kappa * loss).exp()
}
