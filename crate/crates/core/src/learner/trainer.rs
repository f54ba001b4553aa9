use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::replay::{Batch, ReplayBuffer, Transition};
use super::LearnerError;
use crate::diffusion::{
    squash_derivative, unsquash, unsquash_derivative, ChainNoise, ConsistencyNoise, DiffusionPolicy, NoiseClamp, NoiseSchedule,
};
use crate::env::Env;
use crate::nn::{Activation, AdamState, DenseNet, Gradients};

/// Which parts of the confidence-regulated objective are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Cgdm,
    /// Confidence forced to one (`κ = 0`).
    NoConfidence,
    /// Consistency term dropped (`ρ = 0`).
    NoConsistency,
    /// Plain diffusion actor: `w ≡ 1`, `ρ = 0`.
    Gdm,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Cgdm, Mode::NoConfidence, Mode::NoConsistency, Mode::Gdm];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Cgdm => "cgdm",
            Mode::NoConfidence => "no-con",
            Mode::NoConsistency => "no-dc",
            Mode::Gdm => "gdm",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Mode::ALL.into_iter().find(|m| m.name() == name)
    }

    pub fn kappa(self, base: f64) -> f64 {
        match self {
            Mode::Cgdm | Mode::NoConsistency => base,
            Mode::NoConfidence | Mode::Gdm => 0.0,
        }
    }

    pub fn rho(self, base: f64) -> f64 {
        match self {
            Mode::Cgdm | Mode::NoConfidence => base,
            Mode::NoConsistency | Mode::Gdm => 0.0,
        }
    }
}

/// Critic that scores generated actions in the actor objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriticChoice {
    First,
    Min,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub mode: Mode,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub activation: Activation,
    pub denoising_steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub noise_clamp: NoiseClamp,
    pub gamma: f64,
    /// Soft-update rate of the target networks.
    pub tau: f64,
    pub kappa: f64,
    pub rho: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub gradient_steps: usize,
    pub trajectories_per_epoch: usize,
    pub buffer_capacity: usize,
    /// Rewards are multiplied by this before entering TD targets.
    pub reward_scale: f64,
    pub actor_critic: CriticChoice,
    /// Differentiate through the confidence weight (product rule); when
    /// false the weight is treated as a constant.
    pub confidence_gradient: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            mode: Mode::Cgdm,
            actor_hidden: vec![256; 3],
            critic_hidden: vec![256; 2],
            activation: Activation::Tanh,
            denoising_steps: 5,
            beta_min: 0.1,
            beta_max: 10.0,
            noise_clamp: NoiseClamp::Tanh,
            gamma: 0.95,
            tau: 0.005,
            kappa: 1.0,
            rho: 1.0,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            batch_size: 256,
            epochs: 200,
            gradient_steps: 50,
            trajectories_per_epoch: 1,
            buffer_capacity: 1_000_000,
            reward_scale: 0.1,
            actor_critic: CriticChoice::First,
            confidence_gradient: true,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), LearnerError> {
        let bad = |msg: String| Err(LearnerError::InvalidConfig(msg));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma {} outside (0, 1)", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau {} outside (0, 1]", self.tau));
        }
        if !(self.kappa >= 0.0 && self.rho >= 0.0 && self.kappa.is_finite() && self.rho.is_finite()) {
            return bad("kappa and rho must be finite and non-negative".into());
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 || self.trajectories_per_epoch == 0 {
            return bad("batch size, buffer capacity and trajectories per epoch must be positive".into());
        }
        if self.actor_hidden.contains(&0) || self.critic_hidden.contains(&0) {
            return bad("hidden widths must be positive".into());
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return bad(format!("reward scale {} must be positive", self.reward_scale));
        }
        self.schedule().map(|_| ())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule, LearnerError> {
        Ok(NoiseSchedule::new(self.denoising_steps, self.beta_min, self.beta_max)?)
    }

    pub fn effective_kappa(&self) -> f64 {
        self.mode.kappa(self.kappa)
    }

    pub fn effective_rho(&self) -> f64 {
        self.mode.rho(self.rho)
    }
}

/// Fixed randomness of one actor evaluation, so the objective is a
/// deterministic function of the actor parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorNoise {
    pub chain: ChainNoise,
    /// Corruption used to score the generated actions.
    pub confidence: ConsistencyNoise,
    /// Corruption of the buffer actions in the consistency term.
    pub consistency: ConsistencyNoise,
}

impl ActorNoise {
    pub fn draw<R: Rng + ?Sized>(batch: usize, action_dim: usize, steps: usize, rng: &mut R) -> Self {
        ActorNoise {
            chain: ChainNoise::draw(batch, action_dim, steps, rng),
            confidence: ConsistencyNoise::draw(batch, action_dim, steps, rng),
            consistency: ConsistencyNoise::draw(batch, action_dim, steps, rng),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ActorStats {
    /// `mean(w Q / scale) − ρ mean(L_BC)`, the maximized objective.
    pub objective: f64,
    pub q_term: f64,
    /// Mean consistency loss of buffer actions (zero when `ρ = 0`).
    pub consistency_loss: f64,
    pub mean_confidence: f64,
    /// Norm of the consistency term's parameter gradient.
    pub consistency_grad_norm: f64,
    /// Batch mean `|Q|` used to normalize the value term.
    pub q_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpochStats {
    pub epoch: usize,
    pub episode_reward: f64,
    pub actor: ActorStats,
    pub critic_loss: f64,
    pub constraint_violations: u64,
    /// Cumulative optimizer steps after this epoch.
    pub gradient_steps: u64,
}

/// Actor, twin critics, their targets and optimizers.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainerConfig,
    actor: DiffusionPolicy,
    critics: [DenseNet; 2],
    target_actor: DiffusionPolicy,
    target_critics: [DenseNet; 2],
    actor_opt: AdamState,
    critic_opts: [AdamState; 2],
    buffer: ReplayBuffer,
    rng: ChaCha8Rng,
    gradient_steps: u64,
    epochs_done: usize,
}

fn concat(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let mut m = Array2::zeros((a.nrows(), a.ncols() + b.ncols()));
    m.slice_mut(s![.., ..a.ncols()]).assign(&a);
    m.slice_mut(s![.., a.ncols()..]).assign(&b);
    m
}

fn finite(value: f64, what: &str) -> Result<f64, LearnerError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(LearnerError::Divergence(format!("{what} is {value}")))
    }
}

impl Trainer {
    pub fn new(config: TrainerConfig, obs_dim: usize, action_dim: usize, seed: u64) -> Result<Self, LearnerError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actor = DiffusionPolicy::new(
            obs_dim,
            action_dim,
            &config.actor_hidden,
            config.activation,
            config.schedule()?,
            config.noise_clamp,
            &mut rng,
        )?;
        let mut widths = vec![obs_dim + action_dim];
        widths.extend_from_slice(&config.critic_hidden);
        widths.push(1);
        let c1 = DenseNet::new(&widths, config.activation, Activation::Identity, &mut rng)?;
        let c2 = DenseNet::new(&widths, config.activation, Activation::Identity, &mut rng)?;
        let actor_opt = AdamState::for_net(actor.denoiser(), config.actor_lr);
        let critic_opts = [
            AdamState::for_net(&c1, config.critic_lr),
            AdamState::for_net(&c2, config.critic_lr),
        ];
        Ok(Trainer {
            target_actor: actor.clone(),
            target_critics: [c1.clone(), c2.clone()],
            actor,
            critics: [c1, c2],
            actor_opt,
            critic_opts,
            buffer: ReplayBuffer::new(config.buffer_capacity)?,
            rng,
            gradient_steps: 0,
            epochs_done: 0,
            config,
        })
    }

    /// Reassembles a trainer from checkpointed parts; the replay buffer
    /// starts empty.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        config: TrainerConfig,
        actor: DiffusionPolicy,
        critics: [DenseNet; 2],
        target_actor: DiffusionPolicy,
        target_critics: [DenseNet; 2],
        actor_opt: AdamState,
        critic_opts: [AdamState; 2],
        gradient_steps: u64,
        epochs_done: usize,
        seed: u64,
    ) -> Result<Self, LearnerError> {
        config.validate()?;
        Ok(Trainer {
            buffer: ReplayBuffer::new(config.buffer_capacity)?,
            config,
            actor,
            critics,
            target_actor,
            target_critics,
            actor_opt,
            critic_opts,
            rng: ChaCha8Rng::seed_from_u64(seed),
            gradient_steps,
            epochs_done,
        })
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.config
    }

    pub fn actor(&self) -> &DiffusionPolicy {
        &self.actor
    }

    pub fn actor_mut(&mut self) -> &mut DiffusionPolicy {
        &mut self.actor
    }

    pub fn critics(&self) -> &[DenseNet; 2] {
        &self.critics
    }

    pub fn critics_mut(&mut self) -> &mut [DenseNet; 2] {
        &mut self.critics
    }

    pub fn target_actor(&self) -> &DiffusionPolicy {
        &self.target_actor
    }

    pub fn target_actor_mut(&mut self) -> &mut DiffusionPolicy {
        &mut self.target_actor
    }

    pub fn target_critics(&self) -> &[DenseNet; 2] {
        &self.target_critics
    }

    pub fn target_critics_mut(&mut self) -> &mut [DenseNet; 2] {
        &mut self.target_critics
    }

    pub fn actor_optimizer(&self) -> &AdamState {
        &self.actor_opt
    }

    pub fn critic_optimizers(&self) -> &[AdamState; 2] {
        &self.critic_opts
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn buffer_mut(&mut self) -> &mut ReplayBuffer {
        &mut self.buffer
    }

    pub fn gradient_steps(&self) -> u64 {
        self.gradient_steps
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.obs_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.actor.action_dim()
    }

    pub fn is_finite(&self) -> bool {
        self.actor.denoiser().is_finite()
            && self.target_actor.denoiser().is_finite()
            && self.critics.iter().chain(&self.target_critics).all(DenseNet::is_finite)
    }

    /// Samples an action from the online actor.
    pub fn act<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<Vec<f64>, LearnerError> {
        Ok(self.actor.sample_action(obs, rng)?)
    }

    /// `r·scale + γ min(Q̂1, Q̂2)` at target-actor actions; bootstrap dropped
    /// on terminal rows.
    pub fn td_targets(&self, batch: &Batch, noise: &ChainNoise) -> Result<Vec<f64>, LearnerError> {
        let next_actions = self
            .target_actor
            .generate(batch.next_obs.view(), noise)?
            .mapv(crate::diffusion::squash);
        let input = concat(batch.next_obs.view(), next_actions.view());
        let q1 = self.target_critics[0].forward(input.view())?;
        let q2 = self.target_critics[1].forward(input.view())?;
        Ok((0..batch.len())
            .map(|i| {
                let r = batch.rewards[i] * self.config.reward_scale;
                if batch.terminals[i] {
                    r
                } else {
                    r + self.config.gamma * q1[[i, 0]].min(q2[[i, 0]])
                }
            })
            .collect())
    }

    /// `Σ_i mean_b (ŷ_b − Q_i(o_b, a_b))²` with per-critic gradients.
    pub fn critic_loss_and_grads(
        &self,
        batch: &Batch,
        targets: &[f64],
    ) -> Result<(f64, [Gradients; 2]), LearnerError> {
        let input = concat(batch.obs.view(), batch.actions.view());
        let n = batch.len() as f64;
        let mut loss = 0.0;
        let mut grads = [
            Gradients::zeros_like(&self.critics[0]),
            Gradients::zeros_like(&self.critics[1]),
        ];
        for (critic, g) in self.critics.iter().zip(grads.iter_mut()) {
            let tape = critic.forward_tape(input.view())?;
            let residual = tape.output().column(0).to_owned() - &Array1::from(targets.to_vec());
            loss += residual.iter().map(|r| r * r).sum::<f64>() / n;
            let g_out = residual.mapv(|r| 2.0 * r / n).insert_axis(Axis(1));
            critic.backward_tape(&tape, g_out.view(), g)?;
        }
        Ok((finite(loss, "critic loss")?, grads))
    }

    /// One optimizer step per critic; returns the pre-step loss.
    pub fn critic_update(&mut self, batch: &Batch) -> Result<f64, LearnerError> {
        let noise = ChainNoise::draw(batch.len(), self.action_dim(), self.config.denoising_steps, &mut self.rng);
        let targets = self.td_targets(batch, &noise)?;
        let (loss, grads) = self.critic_loss_and_grads(batch, &targets)?;
        for ((critic, opt), g) in self.critics.iter_mut().zip(self.critic_opts.iter_mut()).zip(&grads) {
            opt.apply(critic, g).map_err(divergence)?;
        }
        Ok(loss)
    }

    /// Objective statistics and, if requested, the gradient of the actor
    /// loss (the negated objective) with respect to the denoiser. The batch
    /// mean `|Q|` normalizer is treated as a constant.
    pub fn actor_loss_and_grads(
        &self,
        batch: &Batch,
        noise: &ActorNoise,
        with_grads: bool,
    ) -> Result<(ActorStats, Option<Gradients>), LearnerError> {
        self.actor_loss_at_scale(batch, noise, None, with_grads)
    }

    /// As [`actor_loss_and_grads`](Self::actor_loss_and_grads), with the
    /// `|Q|` normalizer pinned to `q_scale` when given.
    pub fn actor_loss_at_scale(
        &self,
        batch: &Batch,
        noise: &ActorNoise,
        q_scale: Option<f64>,
        with_grads: bool,
    ) -> Result<(ActorStats, Option<Gradients>), LearnerError> {
        let b = batch.len();
        let bf = b as f64;
        let kappa = self.config.effective_kappa();
        let rho = self.config.effective_rho();
        let obs_dim = self.obs_dim();
        let actor = &self.actor;
        let mut grads = Gradients::zeros_like(actor.denoiser());

        let trace = actor.chain_forward(batch.obs.view(), &noise.chain)?;

        // generated actions are scored exactly like buffer actions: mapped
        // back from the action box into the diffusion space
        let seen = trace.action.mapv(unsquash);
        let confidence_trace = if kappa > 0.0 {
            Some(actor.consistency_forward(batch.obs.view(), seen.view(), &noise.confidence)?)
        } else {
            None
        };
        let w: Vec<f64> = match &confidence_trace {
            Some(t) => t.losses.iter().map(|l| crate::diffusion::confidence(*l, kappa)).collect(),
            None => vec![1.0; b],
        };

        let input = concat(batch.obs.view(), trace.action.view());
        let tapes = [
            self.critics[0].forward_tape(input.view())?,
            self.critics[1].forward_tape(input.view())?,
        ];
        // per row: (Q, which critic)
        let picks: Vec<(f64, usize)> = (0..b)
            .map(|i| {
                let (q1, q2) = (tapes[0].output()[[i, 0]], tapes[1].output()[[i, 0]]);
                match self.config.actor_critic {
                    CriticChoice::First => (q1, 0),
                    CriticChoice::Min if q2 < q1 => (q2, 1),
                    CriticChoice::Min => (q1, 0),
                }
            })
            .collect();
        let mean_abs = picks.iter().map(|(q, _)| q.abs()).sum::<f64>() / bf;
        let q_scale = match q_scale {
            Some(fixed) => fixed,
            None if mean_abs > 0.0 => mean_abs,
            None => 1.0,
        };
        let q_term = picks.iter().zip(&w).map(|((q, _), w)| w * q / q_scale).sum::<f64>() / bf;

        let mut stats = ActorStats {
            q_term,
            mean_confidence: w.iter().sum::<f64>() / bf,
            q_scale,
            ..ActorStats::default()
        };

        let consistency_trace = if rho > 0.0 {
            let x0_buffer = batch.actions.mapv(unsquash);
            let t = actor.consistency_forward(batch.obs.view(), x0_buffer.view(), &noise.consistency)?;
            stats.consistency_loss = t.losses.iter().sum::<f64>() / bf;
            Some(t)
        } else {
            None
        };
        stats.objective = finite(q_term - rho * stats.consistency_loss, "actor objective")?;

        if !with_grads {
            return Ok((stats, None));
        }

        // loss = −objective, differentiated w.r.t. the action first
        let mut g_a = Array2::zeros(trace.action.dim());
        for (critic_idx, (critic, tape)) in self.critics.iter().zip(&tapes).enumerate() {
            let mut g_q = Array2::zeros((b, 1));
            let mut any = false;
            for (i, &(_, pick)) in picks.iter().enumerate() {
                if pick == critic_idx {
                    g_q[[i, 0]] = -w[i] / (bf * q_scale);
                    any = true;
                }
            }
            if !any {
                continue;
            }
            let g_in = critic.input_gradient(tape, g_q.view())?;
            g_a += &g_in.slice(s![.., obs_dim..]);
        }
        if let (Some(t), true) = (&confidence_trace, self.config.confidence_gradient) {
            // ∂loss/∂L_b = κ w_b Q_b / (B·scale)
            let coef: Vec<f64> = picks
                .iter()
                .zip(&w)
                .map(|((q, _), w)| kappa * w * q / (bf * q_scale))
                .collect();
            let mut g_seen = actor.consistency_backward(t, &coef, &mut grads)?;
            g_seen.zip_mut_with(&trace.action, |g, &a| *g *= unsquash_derivative(a));
            g_a += &g_seen;
        }
        let mut g_x0 = g_a;
        g_x0.zip_mut_with(&trace.x0, |g, &x| *g *= squash_derivative(x));
        actor.chain_backward(&trace, g_x0.view(), &mut grads)?;

        if let Some(t) = &consistency_trace {
            let mut bc = Gradients::zeros_like(actor.denoiser());
            actor.consistency_backward(t, &vec![rho / bf; b], &mut bc)?;
            stats.consistency_grad_norm = bc.norm();
            grads.add_assign(&bc);
        }
        Ok((stats, Some(grads)))
    }

    pub fn actor_update(&mut self, batch: &Batch) -> Result<ActorStats, LearnerError> {
        let noise = ActorNoise::draw(batch.len(), self.action_dim(), self.config.denoising_steps, &mut self.rng);
        let (stats, grads) = self.actor_loss_and_grads(batch, &noise, true)?;
        let grads = grads.expect("gradients requested");
        self.actor_opt
            .apply(self.actor.denoiser_mut(), &grads)
            .map_err(divergence)?;
        Ok(stats)
    }

    /// `target ← τ online + (1 − τ) target` for all three pairs.
    pub fn soft_update(&mut self) -> Result<(), LearnerError> {
        let tau = self.config.tau;
        self.target_actor
            .denoiser_mut()
            .soft_update_from(self.actor.denoiser(), tau)?;
        for (t, o) in self.target_critics.iter_mut().zip(&self.critics) {
            t.soft_update_from(o, tau)?;
        }
        Ok(())
    }

    /// Actor step, critic step, soft update on one sampled batch.
    pub fn gradient_step(&mut self) -> Result<(ActorStats, f64), LearnerError> {
        let batch = self.buffer.sample(self.config.batch_size, &mut self.rng)?;
        let actor = self.actor_update(&batch)?;
        let critic = self.critic_update(&batch)?;
        self.soft_update()?;
        self.gradient_steps += 1;
        if !self.is_finite() {
            return Err(LearnerError::Divergence("non-finite network parameters".into()));
        }
        Ok((actor, critic))
    }

    /// Runs one episode with the online actor, storing every transition.
    /// Returns the episode reward and the number of fallback decisions.
    pub fn collect_episode(&mut self, env: &mut Env) -> Result<(f64, u64), LearnerError> {
        let seed = self.rng.random::<u64>();
        let mut obs = env.reset(seed)?;
        let before = env.constraint_violations();
        let mut total = 0.0;
        loop {
            let action = self.actor.sample_action(&obs, &mut self.rng)?;
            let out = env.step(&action)?;
            total += out.reward;
            self.buffer.push(Transition {
                obs,
                action,
                reward: out.reward,
                next_obs: out.observation.clone(),
                terminal: out.done,
            })?;
            obs = out.observation;
            if out.done {
                break;
            }
        }
        Ok((total, env.constraint_violations() - before))
    }

    pub fn train_epoch(&mut self, env: &mut Env) -> Result<EpochStats, LearnerError> {
        if env.observation_dim() != self.obs_dim() || env.action_dim() != self.action_dim() {
            return Err(LearnerError::DimensionMismatch {
                expected: (self.obs_dim(), self.action_dim()),
                actual: (env.observation_dim(), env.action_dim()),
            });
        }
        let mut stats = EpochStats {
            epoch: self.epochs_done,
            ..EpochStats::default()
        };
        let m = self.config.trajectories_per_epoch;
        for _ in 0..m {
            let (reward, violations) = self.collect_episode(env)?;
            stats.episode_reward += reward / m as f64;
            stats.constraint_violations += violations;
        }
        let n = self.config.gradient_steps;
        for _ in 0..n {
            let (a, c) = self.gradient_step()?;
            let nf = n as f64;
            stats.actor.objective += a.objective / nf;
            stats.actor.q_term += a.q_term / nf;
            stats.actor.consistency_loss += a.consistency_loss / nf;
            stats.actor.mean_confidence += a.mean_confidence / nf;
            stats.actor.consistency_grad_norm += a.consistency_grad_norm / nf;
            stats.actor.q_scale += a.q_scale / nf;
            stats.critic_loss += c / nf;
        }
        self.epochs_done += 1;
        stats.gradient_steps = self.gradient_steps;
        Ok(stats)
    }

    /// Trains for `epochs` epochs, invoking `on_epoch` after each one.
    pub fn train<F>(&mut self, env: &mut Env, epochs: usize, mut on_epoch: F) -> Result<Vec<EpochStats>, LearnerError>
    where
        F: FnMut(&Trainer, &EpochStats) -> Result<(), LearnerError>,
    {
        let mut log = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            let stats = self.train_epoch(env)?;
            on_epoch(self, &stats)?;
            log.push(stats);
        }
        Ok(log)
    }
}

fn divergence(e: crate::nn::NnError) -> LearnerError {
    match e {
        crate::nn::NnError::NonFiniteGradient { index } => {
            LearnerError::Divergence(format!("non-finite gradient at parameter {index}"))
        }
        other => LearnerError::Nn(other),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::squash;
    use crate::env::WorldConfig;
    use crate::learner::checkpoint::{read_trainer, write_trainer};
    use crate::nn::gradcheck::{central_difference, relative_error};
    use crate::trust::TrustConfig;
    use rand_distr::{Distribution, StandardNormal};

    const OBS: usize = 3;
    const ACT: usize = 2;

    fn tiny(mode: Mode) -> TrainerConfig {
        TrainerConfig {
            mode,
            actor_hidden: vec![8, 8],
            critic_hidden: vec![8, 8],
            denoising_steps: 3,
            batch_size: 4,
            gradient_steps: 2,
            buffer_capacity: 1000,
            ..TrainerConfig::default()
        }
    }

    fn transitions(n: usize, seed: u64) -> Vec<Transition> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
        (0..n)
            .map(|i| Transition {
                obs: (0..OBS).map(|_| normal(&mut rng)).collect(),
                action: (0..ACT).map(|_| rng.random_range(0.05..0.95)).collect(),
                reward: rng.random_range(-5.0..0.0),
                next_obs: (0..OBS).map(|_| normal(&mut rng)).collect(),
                terminal: i == 0,
            })
            .collect()
    }

    fn batch(n: usize, seed: u64) -> Batch {
        let ts = transitions(n, seed);
        Batch::from_transitions(&ts.iter().collect::<Vec<_>>())
    }

    fn pin_output(net: &mut DenseNet, value: f64) {
        let last = net.layers_mut().last_mut().unwrap();
        last.weight.fill(0.0);
        last.bias.fill(value);
    }

    #[test]
    fn td_target_worked_example() {
        let cfg = TrainerConfig {
            reward_scale: 1.0,
            ..tiny(Mode::Cgdm)
        };
        let mut t = Trainer::new(cfg, OBS, ACT, 1).unwrap();
        pin_output(&mut t.target_critics_mut()[0], 2.0);
        pin_output(&mut t.target_critics_mut()[1], 3.0);
        let mut b = batch(2, 3);
        b.rewards.fill(-10.0);
        b.terminals = vec![false, true];
        let noise = ChainNoise::draw(2, ACT, 3, &mut ChaCha8Rng::seed_from_u64(4));
        let y = t.td_targets(&b, &noise).unwrap();
        assert!((y[0] - -8.1).abs() < 1e-12, "{}", y[0]);
        assert_eq!(y[1], -10.0);
    }

    #[test]
    fn td_targets_use_the_smaller_target_critic() {
        let t = Trainer::new(tiny(Mode::Cgdm), OBS, ACT, 2).unwrap();
        let b = batch(16, 5);
        let noise = ChainNoise::draw(16, ACT, 3, &mut ChaCha8Rng::seed_from_u64(6));
        let y = t.td_targets(&b, &noise).unwrap();
        let next = t.target_actor().generate(b.next_obs.view(), &noise).unwrap().mapv(squash);
        let input = concat(b.next_obs.view(), next.view());
        let q: Vec<_> = t.target_critics().iter().map(|c| c.forward(input.view()).unwrap()).collect();
        for i in 0..16 {
            let r = b.rewards[i] * t.config().reward_scale;
            if b.terminals[i] {
                assert_eq!(y[i], r);
                continue;
            }
            for qi in &q {
                assert!(y[i] <= r + t.config().gamma * qi[[i, 0]]);
            }
        }
    }

    #[test]
    fn critic_loss_is_the_summed_mean_squared_residual() {
        let t = Trainer::new(tiny(Mode::Cgdm), OBS, ACT, 3).unwrap();
        let b = batch(8, 7);
        let targets: Vec<f64> = (0..8).map(|i| i as f64 * 0.3 - 1.0).collect();
        let (loss, _) = t.critic_loss_and_grads(&b, &targets).unwrap();
        let input = concat(b.obs.view(), b.actions.view());
        let mut expected = 0.0;
        for c in t.critics() {
            let q = c.forward(input.view()).unwrap();
            expected += (0..8).map(|i| (targets[i] - q[[i, 0]]).powi(2)).sum::<f64>() / 8.0;
        }
        assert!((loss - expected).abs() <= 1e-14 * expected.abs().max(1.0));
    }

    #[test]
    fn exact_critics_have_zero_loss_and_gradient() {
        let mut t = Trainer::new(tiny(Mode::Cgdm), OBS, ACT, 4).unwrap();
        let p = t.critics()[0].params();
        t.critics_mut()[1].set_params(&p).unwrap();
        let b = batch(8, 8);
        let input = concat(b.obs.view(), b.actions.view());
        let targets: Vec<f64> = t.critics()[0].forward(input.view()).unwrap().column(0).to_vec();
        let (loss, grads) = t.critic_loss_and_grads(&b, &targets).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.iter().all(Gradients::is_zero));
    }

    #[test]
    fn soft_update_worked_example() {
        let mut t = Trainer::new(tiny(Mode::Cgdm), OBS, ACT, 5).unwrap();
        let ones = vec![1.0; t.actor().denoiser().num_params()];
        let zeros = vec![0.0; ones.len()];
        t.actor_mut().denoiser_mut().set_params(&ones).unwrap();
        t.target_actor_mut().denoiser_mut().set_params(&zeros).unwrap();
        t.soft_update().unwrap();
        assert!(t.target_actor().denoiser().params().iter().all(|&p| p == 0.005));
    }

    #[test]
    fn unit_rate_copies_and_equal_networks_stay_put() {
        let mut t = Trainer::new(TrainerConfig { tau: 1.0, ..tiny(Mode::Cgdm) }, OBS, ACT, 6).unwrap();
        let noise = ActorNoise::draw(4, ACT, 3, &mut ChaCha8Rng::seed_from_u64(0));
        let b = batch(4, 9);
        let (_, g) = t.actor_loss_and_grads(&b, &noise, true).unwrap();
        let mut p = t.actor().denoiser().params();
        for (x, d) in p.iter_mut().zip(g.unwrap().to_flat()) {
            *x -= d;
        }
        t.actor_mut().denoiser_mut().set_params(&p).unwrap();
        t.soft_update().unwrap();
        assert_eq!(t.target_actor().denoiser().params(), p);
        let before = t.target_critics()[0].params();
        t.soft_update().unwrap();
        for (a, b) in t.target_critics()[0].params().iter().zip(&before) {
            assert!((a - b).abs() <= 2.0 * f64::EPSILON * b.abs());
        }
    }

    #[test]
    fn target_lag_shrinks_geometrically() {
        let tau = 0.1;
        let mut t = Trainer::new(TrainerConfig { tau, ..tiny(Mode::Cgdm) }, OBS, ACT, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = t.critics()[0].num_params();
        let online: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        t.critics_mut()[0].set_params(&online).unwrap();
        let gap = |t: &Trainer| -> f64 {
            t.target_critics()[0]
                .params()
                .iter()
                .zip(&online)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let start = gap(&t);
        for step in 1..=20 {
            t.soft_update().unwrap();
            let expected = start * (1.0 - tau).powi(step);
            assert!((gap(&t) - expected).abs() <= 1e-12 * start, "step {step}");
        }
    }

    #[test]
    fn zero_epochs_leave_everything_untouched() {
        let world = WorldConfig {
            num_vehicles: 2,
            num_rsus: 2,
            episode_length: 5,
            ..WorldConfig::default()
        };
        let mut env = Env::new(world, TrustConfig::default()).unwrap();
        let mut t = Trainer::new(tiny(Mode::Cgdm), env.observation_dim(), env.action_dim(), 8).unwrap();
        let before = t.actor().denoiser().params();
        let log = t.train(&mut env, 0, |_, _| Ok(())).unwrap();
        assert!(log.is_empty());
        assert_eq!(t.actor().denoiser().params(), before);
        assert_eq!(t.gradient_steps(), 0);
    }

    #[test]
    fn mode_switches_show_in_telemetry() {
        let b = batch(4, 10);
        let noise = ActorNoise::draw(4, ACT, 3, &mut ChaCha8Rng::seed_from_u64(2));
        for mode in Mode::ALL {
            let t = Trainer::new(tiny(mode), OBS, ACT, 9).unwrap();
            let (s, _) = t.actor_loss_and_grads(&b, &noise, true).unwrap();
            assert!(s.mean_confidence > 0.0 && s.mean_confidence <= 1.0);
            if mode.kappa(1.0) == 0.0 {
                assert_eq!(s.mean_confidence, 1.0);
            } else {
                assert!(s.mean_confidence < 1.0);
            }
            if mode.rho(1.0) == 0.0 {
                assert_eq!((s.consistency_loss, s.consistency_grad_norm), (0.0, 0.0));
            } else {
                assert!(s.consistency_grad_norm > 0.0);
            }
        }
    }

    #[test]
    fn actor_gradient_matches_finite_differences() {
        let b = batch(4, 11);
        let noise = ActorNoise::draw(4, ACT, 3, &mut ChaCha8Rng::seed_from_u64(3));
        for mode in Mode::ALL {
            let t = Trainer::new(tiny(mode), OBS, ACT, 10).unwrap();
            let (s, g) = t.actor_loss_and_grads(&b, &noise, true).unwrap();
            let analytic = g.unwrap().to_flat();
            let mut probe = t.clone();
            let numeric = central_difference(
                |p| {
                    probe.actor_mut().denoiser_mut().set_params(p).unwrap();
                    -probe.actor_loss_at_scale(&b, &noise, Some(s.q_scale), false).unwrap().0.objective
                },
                &t.actor().denoiser().params(),
                1e-6,
            );
            let err = relative_error(&analytic, &numeric);
            assert!(err < 1e-4, "{}: relative error {err}", mode.name());
        }
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let world = WorldConfig {
            num_vehicles: 2,
            num_rsus: 2,
            episode_length: 5,
            ..WorldConfig::default()
        };
        let mut env = Env::new(world, TrustConfig::default()).unwrap();
        let cfg = tiny(Mode::Cgdm);
        let mut t = Trainer::new(cfg.clone(), env.observation_dim(), env.action_dim(), 11).unwrap();
        t.train(&mut env, 2, |_, _| Ok(())).unwrap();
        let mut bytes = Vec::new();
        write_trainer(&mut bytes, &t).unwrap();
        let back = read_trainer(&mut bytes.as_slice(), cfg.clone(), 11).unwrap();
        assert_eq!(back.gradient_steps(), t.gradient_steps());
        assert_eq!(back.epochs_done(), 2);
        assert_eq!(back.actor().denoiser().params(), t.actor().denoiser().params());
        assert_eq!(back.target_critics()[1].params(), t.target_critics()[1].params());
        let mut again = Vec::new();
        write_trainer(&mut again, &back).unwrap();
        assert_eq!(again, bytes);
        let other = TrainerConfig {
            denoising_steps: 4,
            ..cfg
        };
        assert!(read_trainer(&mut bytes.as_slice(), other, 11).is_err());
    }
}
