use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use super::schedule::NoiseSchedule;
use super::DiffusionError;
use crate::nn::{Activation, DenseNet, Gradients, Tape};

/// Width of the sinusoidal step embedding fed to the denoiser.
pub const EMBEDDING_DIM: usize = 16;

/// Actions map back into the diffusion space no further than this from the
/// origin, so edge actions give finite, moderately sized targets.
pub const LATENT_BOUND: f64 = 2.0;

/// How the predicted noise enters the reverse-step mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseClamp {
    Tanh,
    Unclamped,
}

impl NoiseClamp {
    fn apply(self, e: f64) -> f64 {
        match self {
            NoiseClamp::Tanh => e.tanh(),
            NoiseClamp::Unclamped => e,
        }
    }

    fn derivative(self, e: f64) -> f64 {
        match self {
            NoiseClamp::Tanh => {
                let t = e.tanh();
                1.0 - t * t
            }
            NoiseClamp::Unclamped => 1.0,
        }
    }
}

/// Sinusoidal embedding of step `k`: sines then cosines over geometric
/// frequencies.
pub fn step_embedding(k: usize) -> [f64; EMBEDDING_DIM] {
    let half = EMBEDDING_DIM / 2;
    let mut out = [0.0; EMBEDDING_DIM];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        let phase = k as f64 * freq;
        out[i] = phase.sin();
        out[half + i] = phase.cos();
    }
    out
}

/// Maps a pre-squash chain output into the `[0, 1]` action box.
pub fn squash(x: f64) -> f64 {
    (x.tanh() + 1.0) / 2.0
}

/// Derivative of [`squash`].
pub fn squash_derivative(x: f64) -> f64 {
    let t = x.tanh();
    (1.0 - t * t) / 2.0
}

/// Inverse of [`squash`], clamped to `±LATENT_BOUND`.
pub fn unsquash(a: f64) -> f64 {
    let y = 2.0 * a - 1.0;
    if y.abs() >= LATENT_BOUND.tanh() {
        LATENT_BOUND.copysign(y)
    } else {
        y.atanh()
    }
}

/// Derivative of [`unsquash`]; zero where the clamp is active.
pub fn unsquash_derivative(a: f64) -> f64 {
    let y = 2.0 * a - 1.0;
    if y.abs() >= LATENT_BOUND.tanh() {
        0.0
    } else {
        2.0 / (1.0 - y * y)
    }
}

/// Noise consumed by one run of the reverse chain: the starting point
/// `x_K` and one draw per stochastic step (`steps[k - 2]` for `k ≥ 2`).
#[derive(Debug, Clone, PartialEq)]
pub struct ChainNoise {
    pub initial: Array2<f64>,
    pub steps: Vec<Array2<f64>>,
}

impl ChainNoise {
    pub fn draw<R: Rng + ?Sized>(batch: usize, dim: usize, steps: usize, rng: &mut R) -> Self {
        let initial = normal_matrix(batch, dim, rng);
        let steps = (2..=steps).map(|_| normal_matrix(batch, dim, rng)).collect();
        ChainNoise { initial, steps }
    }
}

/// Per-sample step and injected noise for the consistency loss.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyNoise {
    pub ks: Vec<usize>,
    pub eps: Array2<f64>,
}

impl ConsistencyNoise {
    pub fn draw<R: Rng + ?Sized>(batch: usize, dim: usize, steps: usize, rng: &mut R) -> Self {
        let ks = (0..batch).map(|_| rng.random_range(1..=steps)).collect();
        ConsistencyNoise {
            ks,
            eps: normal_matrix(batch, dim, rng),
        }
    }
}

pub fn normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// Everything the backward pass needs from a differentiable chain run.
#[derive(Debug, Clone)]
pub struct ChainTrace {
    /// `(k, tape)` in execution order, `k = K..1`.
    tapes: Vec<(usize, Tape)>,
    /// Pre-squash chain output `x_0`.
    pub x0: Array2<f64>,
    /// Squashed action in `[0, 1]`.
    pub action: Array2<f64>,
}

/// Recorded consistency-loss evaluation.
#[derive(Debug, Clone)]
pub struct ConsistencyTrace {
    tape: Tape,
    ks: Vec<usize>,
    residual: Array2<f64>,
    /// Per-sample loss: squared residual averaged over action components.
    pub losses: Vec<f64>,
}

/// Conditional DDPM actor: a denoiser network plus its noise schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionPolicy {
    denoiser: DenseNet,
    schedule: NoiseSchedule,
    obs_dim: usize,
    action_dim: usize,
    clamp: NoiseClamp,
}

impl DiffusionPolicy {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        activation: Activation,
        schedule: NoiseSchedule,
        clamp: NoiseClamp,
        rng: &mut R,
    ) -> Result<Self, DiffusionError> {
        let mut widths = vec![action_dim + EMBEDDING_DIM + obs_dim];
        widths.extend_from_slice(hidden);
        widths.push(action_dim);
        let denoiser = DenseNet::new(&widths, activation, Activation::Identity, rng)?;
        Self::from_parts(denoiser, schedule, obs_dim, action_dim, clamp)
    }

    pub fn from_parts(
        denoiser: DenseNet,
        schedule: NoiseSchedule,
        obs_dim: usize,
        action_dim: usize,
        clamp: NoiseClamp,
    ) -> Result<Self, DiffusionError> {
        let expected = action_dim + EMBEDDING_DIM + obs_dim;
        if denoiser.input_dim() != expected || denoiser.output_dim() != action_dim {
            return Err(DiffusionError::DimensionMismatch {
                expected,
                actual: denoiser.input_dim(),
            });
        }
        Ok(DiffusionPolicy {
            denoiser,
            schedule,
            obs_dim,
            action_dim,
            clamp,
        })
    }

    pub fn denoiser(&self) -> &DenseNet {
        &self.denoiser
    }

    pub fn denoiser_mut(&mut self) -> &mut DenseNet {
        &mut self.denoiser
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn clamp(&self) -> NoiseClamp {
        self.clamp
    }

    fn check_obs(&self, obs: &ArrayView2<f64>, rows: usize) -> Result<(), DiffusionError> {
        if obs.ncols() != self.obs_dim {
            return Err(DiffusionError::DimensionMismatch {
                expected: self.obs_dim,
                actual: obs.ncols(),
            });
        }
        if obs.nrows() != rows {
            return Err(DiffusionError::DimensionMismatch {
                expected: rows,
                actual: obs.nrows(),
            });
        }
        Ok(())
    }

    /// Denoiser input rows `[x | embed(k_b) | obs]`.
    fn input(&self, x: ArrayView2<f64>, ks: &[usize], obs: ArrayView2<f64>) -> Array2<f64> {
        let (b, a) = (x.nrows(), self.action_dim);
        let mut input = Array2::zeros((b, a + EMBEDDING_DIM + self.obs_dim));
        input.slice_mut(s![.., ..a]).assign(&x);
        for (row, &k) in ks.iter().enumerate() {
            let emb = step_embedding(k);
            for (j, e) in emb.iter().enumerate() {
                input[[row, a + j]] = *e;
            }
        }
        input.slice_mut(s![.., a + EMBEDDING_DIM..]).assign(&obs);
        input
    }

    /// Raw noise prediction `ε_θ(x, k_b, obs)` per row.
    pub fn predict_noise(
        &self,
        x: ArrayView2<f64>,
        ks: &[usize],
        obs: ArrayView2<f64>,
    ) -> Result<Array2<f64>, DiffusionError> {
        self.check_obs(&obs, x.nrows())?;
        for &k in ks {
            self.schedule.check_step(k)?;
        }
        Ok(self.denoiser.forward(self.input(x, ks, obs).view())?)
    }

    fn mean_from_noise(&self, x_k: ArrayView2<f64>, k: usize, noise: &Array2<f64>) -> Array2<f64> {
        let sch = &self.schedule;
        let c1 = 1.0 / sch.alpha(k).sqrt();
        let c2 = sch.beta(k) / (sch.alpha(k).sqrt() * (1.0 - sch.alpha_bar(k)).sqrt());
        let clamp = self.clamp;
        let mut mean = x_k.to_owned();
        mean.zip_mut_with(noise, |m, &e| *m = c1 * *m - c2 * clamp.apply(e));
        mean
    }

    /// Reverse-step mean `(x_k − β_k s(ε_θ)/√(1 − ᾱ_k)) / √α_k`.
    pub fn posterior_mean(
        &self,
        x_k: ArrayView2<f64>,
        k: usize,
        obs: ArrayView2<f64>,
    ) -> Result<Array2<f64>, DiffusionError> {
        let noise = self.predict_noise(x_k, &vec![k; x_k.nrows()], obs)?;
        Ok(self.mean_from_noise(x_k, k, &noise))
    }

    /// `x_{k−1} = μ_θ(x_k, k, obs) + √β̃_k ε`.
    pub fn reverse_step(
        &self,
        x_k: ArrayView2<f64>,
        k: usize,
        obs: ArrayView2<f64>,
        eps: ArrayView2<f64>,
    ) -> Result<Array2<f64>, DiffusionError> {
        let mut x = self.posterior_mean(x_k, k, obs)?;
        let sd = self.schedule.posterior_variance(k).sqrt();
        x.scaled_add(sd, &eps);
        Ok(x)
    }

    /// Full reverse chain without recording; returns pre-squash `x_0`.
    pub fn generate(&self, obs: ArrayView2<f64>, noise: &ChainNoise) -> Result<Array2<f64>, DiffusionError> {
        self.check_obs(&obs, noise.initial.nrows())?;
        let mut x = noise.initial.clone();
        for k in (1..=self.schedule.steps()).rev() {
            x = if k > 1 {
                self.reverse_step(x.view(), k, obs, noise.steps[k - 2].view())?
            } else {
                self.posterior_mean(x.view(), k, obs)?
            };
            if let Some(i) = x.iter().position(|v| !v.is_finite()) {
                return Err(DiffusionError::SamplingDivergence { step: k, index: i });
            }
        }
        Ok(x)
    }

    /// Samples one `[0, 1]` action per observation row.
    pub fn sample<R: Rng + ?Sized>(&self, obs: ArrayView2<f64>, rng: &mut R) -> Result<Array2<f64>, DiffusionError> {
        let noise = ChainNoise::draw(obs.nrows(), self.action_dim, self.schedule.steps(), rng);
        Ok(self.generate(obs, &noise)?.mapv(squash))
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<Vec<f64>, DiffusionError> {
        let view = ArrayView2::from_shape((1, obs.len()), obs).map_err(|_| DiffusionError::DimensionMismatch {
            expected: self.obs_dim,
            actual: obs.len(),
        })?;
        Ok(self.sample(view, rng)?.into_raw_vec_and_offset().0)
    }

    /// Reverse chain that records every denoiser evaluation for
    /// [`DiffusionPolicy::chain_backward`].
    pub fn chain_forward(&self, obs: ArrayView2<f64>, noise: &ChainNoise) -> Result<ChainTrace, DiffusionError> {
        let b = noise.initial.nrows();
        self.check_obs(&obs, b)?;
        let mut x = noise.initial.clone();
        let mut tapes = Vec::with_capacity(self.schedule.steps());
        for k in (1..=self.schedule.steps()).rev() {
            let tape = self.denoiser.forward_tape(self.input(x.view(), &vec![k; b], obs).view())?;
            let mut next = self.mean_from_noise(x.view(), k, tape.output());
            if k > 1 {
                next.scaled_add(self.schedule.posterior_variance(k).sqrt(), &noise.steps[k - 2]);
            }
            if let Some(i) = next.iter().position(|v| !v.is_finite()) {
                return Err(DiffusionError::SamplingDivergence { step: k, index: i });
            }
            tapes.push((k, tape));
            x = next;
        }
        let action = x.mapv(squash);
        Ok(ChainTrace { tapes, x0: x, action })
    }

    /// Back-propagates `g_x0 = ∂L/∂x_0` through the recorded chain,
    /// accumulating denoiser parameter gradients.
    pub fn chain_backward(
        &self,
        trace: &ChainTrace,
        grad_x0: ArrayView2<f64>,
        grads: &mut Gradients,
    ) -> Result<(), DiffusionError> {
        let a = self.action_dim;
        let clamp = self.clamp;
        let mut g = grad_x0.to_owned();
        for (k, tape) in trace.tapes.iter().rev() {
            let sch = &self.schedule;
            let c1 = 1.0 / sch.alpha(*k).sqrt();
            let c2 = sch.beta(*k) / (sch.alpha(*k).sqrt() * (1.0 - sch.alpha_bar(*k)).sqrt());
            let mut g_e = g.clone();
            g_e.zip_mut_with(tape.output(), |ge, &e| *ge *= -c2 * clamp.derivative(e));
            let g_in = self.denoiser.backward_tape(tape, g_e.view(), grads)?;
            g.mapv_inplace(|v| c1 * v);
            g += &g_in.slice(s![.., ..a]);
        }
        Ok(())
    }

    /// Consistency losses of `x0` rows under the given corruption.
    pub fn consistency_forward(
        &self,
        obs: ArrayView2<f64>,
        x0: ArrayView2<f64>,
        noise: &ConsistencyNoise,
    ) -> Result<ConsistencyTrace, DiffusionError> {
        let b = x0.nrows();
        self.check_obs(&obs, b)?;
        if noise.ks.len() != b || noise.eps.dim() != x0.dim() {
            return Err(DiffusionError::DimensionMismatch {
                expected: b,
                actual: noise.ks.len(),
            });
        }
        let mut x_k = x0.to_owned();
        for (row, &k) in noise.ks.iter().enumerate() {
            self.schedule.check_step(k)?;
            let ab = self.schedule.alpha_bar(k);
            let (ca, cb) = (ab.sqrt(), (1.0 - ab).sqrt());
            let mut r = x_k.row_mut(row);
            r.zip_mut_with(&noise.eps.row(row), |x, &e| *x = ca * *x + cb * e);
        }
        let tape = self.denoiser.forward_tape(self.input(x_k.view(), &noise.ks, obs).view())?;
        let residual = tape.output() - &noise.eps;
        let losses = residual
            .axis_iter(Axis(0))
            .map(|r| r.iter().map(|v| v * v).sum::<f64>() / self.action_dim as f64)
            .collect();
        Ok(ConsistencyTrace {
            tape,
            ks: noise.ks.clone(),
            residual,
            losses,
        })
    }

    /// Mean consistency loss over the rows; convenience for evaluation.
    pub fn consistency_loss(
        &self,
        obs: ArrayView2<f64>,
        x0: ArrayView2<f64>,
        noise: &ConsistencyNoise,
    ) -> Result<f64, DiffusionError> {
        let t = self.consistency_forward(obs, x0, noise)?;
        Ok(t.losses.iter().sum::<f64>() / t.losses.len().max(1) as f64)
    }

    /// Accumulates `Σ_b coef_b ∇ L_b` into `grads` and returns `∂(Σ_b coef_b L_b)/∂x0`.
    pub fn consistency_backward(
        &self,
        trace: &ConsistencyTrace,
        coef: &[f64],
        grads: &mut Gradients,
    ) -> Result<Array2<f64>, DiffusionError> {
        let scale = 2.0 / self.action_dim as f64;
        let mut g_out = trace.residual.clone();
        for (mut row, &c) in g_out.axis_iter_mut(Axis(0)).zip(coef) {
            row.mapv_inplace(|r| r * c * scale);
        }
        let g_in = self.denoiser.backward_tape(&trace.tape, g_out.view(), grads)?;
        let mut g_x0 = g_in.slice(s![.., ..self.action_dim]).to_owned();
        for (mut row, &k) in g_x0.axis_iter_mut(Axis(0)).zip(&trace.ks) {
            let ca = self.schedule.alpha_bar(k).sqrt();
            row.mapv_inplace(|v| v * ca);
        }
        Ok(g_x0)
    }
}
