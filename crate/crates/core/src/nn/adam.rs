use super::{DenseNet, Gradients, NnError};

/// Bias-corrected Adam state over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
}

impl AdamState {
    pub fn new(num_params: usize, learning_rate: f64) -> Self {
        AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first_moment: vec![0.0; num_params],
            second_moment: vec![0.0; num_params],
        }
    }

    pub fn for_net(net: &DenseNet, learning_rate: f64) -> Self {
        Self::new(net.num_params(), learning_rate)
    }

    /// Descends `params` along `gradient`.
    pub fn update(&mut self, params: &mut [f64], gradient: &[f64]) -> Result<(), NnError> {
        let n = self.first_moment.len();
        if params.len() != n || gradient.len() != n {
            return Err(NnError::DimensionMismatch {
                expected: n,
                actual: gradient.len().min(params.len()),
            });
        }
        if let Some(index) = gradient.iter().position(|g| !g.is_finite()) {
            return Err(NnError::NonFiniteGradient { index });
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..n {
            let g = gradient[i];
            let m = self.beta1 * self.first_moment[i] + (1.0 - self.beta1) * g;
            let v = self.beta2 * self.second_moment[i] + (1.0 - self.beta2) * g * g;
            self.first_moment[i] = m;
            self.second_moment[i] = v;
            let m_hat = m / bc1;
            let v_hat = v / bc2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }

    pub fn apply(&mut self, net: &mut DenseNet, grads: &Gradients) -> Result<(), NnError> {
        let mut params = net.params();
        self.update(&mut params, &grads.to_flat())?;
        net.set_params(&params)
    }
}
