//! Trainer snapshots.
//!
//! Little-endian layout:
//!
//! ```text
//! magic          4 bytes  b"AMTR"
//! version        u16      1
//! obs_dim        u32
//! action_dim     u32
//! steps K        u32
//! beta_min       f64
//! beta_max       f64
//! noise clamp    u8       0 tanh, 1 unclamped
//! grad steps     u64
//! epochs done    u64
//! actor          network record with optimizer
//! critic 1, 2    network records with optimizer
//! target actor   network record without optimizer
//! target critics network records without optimizer
//! ```
//!
//! Network records use the layout of [`crate::nn::checkpoint`]. The replay
//! buffer is not stored.

use std::io::{Read, Write};

use super::{LearnerError, Trainer, TrainerConfig};
use crate::diffusion::{DiffusionPolicy, NoiseClamp, NoiseSchedule};
use crate::nn::checkpoint::{read_net, write_net};
use crate::nn::{AdamState, DenseNet, NnError};

pub const TRAINER_MAGIC: &[u8; 4] = b"AMTR";
pub const TRAINER_VERSION: u16 = 1;

fn clamp_code(c: NoiseClamp) -> u8 {
    match c {
        NoiseClamp::Tanh => 0,
        NoiseClamp::Unclamped => 1,
    }
}

pub fn write_trainer<W: Write>(w: &mut W, t: &Trainer) -> Result<(), LearnerError> {
    let io = |e: std::io::Error| LearnerError::Nn(NnError::Io(e));
    let sch = t.actor().schedule();
    w.write_all(TRAINER_MAGIC).map_err(io)?;
    w.write_all(&TRAINER_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(t.obs_dim() as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&(t.action_dim() as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&(sch.steps() as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&sch.beta_min().to_le_bytes()).map_err(io)?;
    w.write_all(&sch.beta_max().to_le_bytes()).map_err(io)?;
    w.write_all(&[clamp_code(t.actor().clamp())]).map_err(io)?;
    w.write_all(&t.gradient_steps().to_le_bytes()).map_err(io)?;
    w.write_all(&(t.epochs_done() as u64).to_le_bytes()).map_err(io)?;
    write_net(w, t.actor().denoiser(), Some(t.actor_optimizer()))?;
    for (c, o) in t.critics().iter().zip(t.critic_optimizers()) {
        write_net(w, c, Some(o))?;
    }
    write_net(w, t.target_actor().denoiser(), None)?;
    for c in t.target_critics() {
        write_net(w, c, None)?;
    }
    Ok(())
}

fn bytes<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N], LearnerError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| LearnerError::Nn(NnError::Io(e)))?;
    Ok(buf)
}

fn net_with_opt<R: Read>(r: &mut R) -> Result<(DenseNet, AdamState), LearnerError> {
    match read_net(r)? {
        (net, Some(opt)) => Ok((net, opt)),
        _ => Err(LearnerError::Nn(NnError::Checkpoint("missing optimizer state".into()))),
    }
}

/// Restores a trainer. Structural fields in `config` must agree with the
/// snapshot; `seed` reseeds the sampling stream.
pub fn read_trainer<R: Read>(r: &mut R, config: TrainerConfig, seed: u64) -> Result<Trainer, LearnerError> {
    let bad = |m: String| LearnerError::Nn(NnError::Checkpoint(m));
    if &bytes::<4, _>(r)? != TRAINER_MAGIC {
        return Err(bad("bad trainer magic".into()));
    }
    let version = u16::from_le_bytes(bytes::<2, _>(r)?);
    if version != TRAINER_VERSION {
        return Err(bad(format!("unsupported trainer version {version}")));
    }
    let obs_dim = u32::from_le_bytes(bytes::<4, _>(r)?) as usize;
    let action_dim = u32::from_le_bytes(bytes::<4, _>(r)?) as usize;
    let steps = u32::from_le_bytes(bytes::<4, _>(r)?) as usize;
    let beta_min = f64::from_le_bytes(bytes::<8, _>(r)?);
    let beta_max = f64::from_le_bytes(bytes::<8, _>(r)?);
    let clamp = match bytes::<1, _>(r)?[0] {
        0 => NoiseClamp::Tanh,
        1 => NoiseClamp::Unclamped,
        c => return Err(bad(format!("unknown clamp code {c}"))),
    };
    if steps != config.denoising_steps || beta_min != config.beta_min || beta_max != config.beta_max {
        return Err(bad(format!(
            "snapshot schedule (K={steps}, {beta_min}, {beta_max}) differs from configuration"
        )));
    }
    let grad_steps = u64::from_le_bytes(bytes::<8, _>(r)?);
    let epochs = u64::from_le_bytes(bytes::<8, _>(r)?) as usize;
    let schedule = NoiseSchedule::new(steps, beta_min, beta_max)?;

    let (actor_net, actor_opt) = net_with_opt(r)?;
    let (c1, o1) = net_with_opt(r)?;
    let (c2, o2) = net_with_opt(r)?;
    let (target_actor_net, _) = read_net(r)?;
    let (t1, _) = read_net(r)?;
    let (t2, _) = read_net(r)?;
    let actor = DiffusionPolicy::from_parts(actor_net, schedule.clone(), obs_dim, action_dim, clamp)?;
    let target_actor = DiffusionPolicy::from_parts(target_actor_net, schedule, obs_dim, action_dim, clamp)?;
    Trainer::from_parts(
        TrainerConfig {
            noise_clamp: clamp,
            ..config
        },
        actor,
        [c1, c2],
        target_actor,
        [t1, t2],
        actor_opt,
        [o1, o2],
        grad_steps,
        epochs,
        seed,
    )
}
