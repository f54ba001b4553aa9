use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use toml::Value;

use super::config::{parse_document, EvalPolicy, ExperimentConfig, RunMode, SweepAxis};
use super::metrics::{summarize, write_metrics, write_summary, write_timing, MetricRow};
use super::HarnessError;
use crate::env::Env;
use crate::learner::checkpoint::{read_trainer, write_trainer};
use crate::learner::{EpochStats, LearnerError, Trainer};

/// Evaluation episode `i` always replays world seed `EVAL_SEED_BASE + i`,
/// so every mode and epoch is tested on the same scenarios.
pub const EVAL_SEED_BASE: u64 = 1_000_000;
const EVAL_STREAM: u64 = 0xE7A1;

/// I.i.d. uniform `[0, 1)` entries.
pub fn random_policy<R: Rng + ?Sized>(action_dim: usize, rng: &mut R) -> Vec<f64> {
    (0..action_dim).map(|_| rng.random::<f64>()).collect()
}

/// Keeps every agent where it is, splits CPU evenly and leaves MTD off.
pub fn stay_policy(env: &Env) -> Vec<f64> {
    let cfg = env.config();
    let (nv, ns) = (cfg.num_vehicles, cfg.num_rsus);
    let mut a = vec![0.0; cfg.action_dim()];
    for (v, &s) in env.state().hosted.iter().enumerate() {
        a[v * ns + s] = 1.0;
    }
    debug_assert!(a[2 * nv * ns..].iter().all(|&m| m == 0.0));
    a
}

enum Policy<'a> {
    Random,
    Stay,
    Learned(&'a Trainer),
}

impl Policy<'_> {
    fn act(&self, env: &Env, obs: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<f64>, HarnessError> {
        Ok(match self {
            Policy::Random => random_policy(env.action_dim(), rng),
            Policy::Stay => stay_policy(env),
            Policy::Learned(t) => t.act(obs, rng)?,
        })
    }
}

struct Episode {
    reward: f64,
    /// Mean per-vehicle total latency per slot.
    latency: f64,
    violations: u64,
}

/// Per-slot `(slot, metric, value)` samples of one episode.
type Trace = Vec<(u64, String, f64)>;

fn trace_reputations(env: &Env, slot: u64, trace: &mut Trace) {
    let (nv, ns) = (env.config().num_vehicles, env.config().num_rsus);
    let rep = env.trust().reputation_matrix();
    for u in 0..nv {
        for s in 0..ns {
            trace.push((slot, format!("reputation_u{u}_s{s}"), rep[u * ns + s]));
        }
    }
}

fn run_episode(
    policy: &Policy,
    env: &mut Env,
    seed: u64,
    rng: &mut ChaCha8Rng,
    mut trace: Option<&mut Trace>,
) -> Result<Episode, HarnessError> {
    let mut obs = env.reset(seed)?;
    let before = env.constraint_violations();
    let nv = env.config().num_vehicles as f64;
    let (mut reward, mut latency, mut slots) = (0.0, 0.0, 0usize);
    if let Some(t) = trace.as_deref_mut() {
        trace_reputations(env, 0, t);
    }
    loop {
        let action = policy.act(env, &obs, rng)?;
        let out = env.step(&action)?;
        reward += out.reward;
        let slot_latency = out.breakdowns.iter().map(|b| b.total).sum::<f64>() / nv;
        latency += slot_latency;
        slots += 1;
        if let Some(t) = trace.as_deref_mut() {
            let slot = slots as u64;
            trace_reputations(env, slot, t);
            for (s, (&hit, &mtd)) in out.attacked.iter().zip(&out.decoded.mtd).enumerate() {
                t.push((slot, format!("attacked_s{s}"), f64::from(u8::from(hit))));
                t.push((slot, format!("mtd_s{s}"), f64::from(u8::from(mtd))));
            }
            t.push((slot, "slot_latency".into(), slot_latency));
        }
        obs = out.observation;
        if out.done {
            break;
        }
    }
    Ok(Episode {
        reward,
        latency: latency / slots as f64,
        violations: env.constraint_violations() - before,
    })
}

/// Mean reward and latency over the fixed evaluation scenarios.
fn test_policy(
    policy: &Policy,
    env: &mut Env,
    episodes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64), HarnessError> {
    let (mut reward, mut latency) = (0.0, 0.0);
    for i in 0..episodes {
        let ep = run_episode(policy, env, EVAL_SEED_BASE + i as u64, rng, None)?;
        reward += ep.reward;
        latency += ep.latency;
    }
    let n = episodes as f64;
    Ok((reward / n, latency / n))
}

fn eval_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(EVAL_STREAM);
    rng
}

fn format_value(v: f64) -> String {
    format!("{v}")
}

/// `{mode}[-{axis}{value}]-s{seed}`.
pub fn run_id(mode: &str, seed: u64, sweep: Option<(SweepAxis, f64)>) -> String {
    format!("{}-s{seed}", cell_label(mode, sweep))
}

fn cell_label(mode: &str, sweep: Option<(SweepAxis, f64)>) -> String {
    match sweep {
        Some((axis, v)) => format!("{mode}-{}{}", axis.name(), format_value(v)),
        None => mode.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Completed,
    Diverged { epoch: usize, message: String },
    Failed(String),
}

impl RunStatus {
    fn describe(&self) -> String {
        match self {
            RunStatus::Completed => "completed".into(),
            RunStatus::Diverged { epoch, message } => format!("diverged at epoch {epoch}: {message}"),
            RunStatus::Failed(m) => format!("failed: {m}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub run_id: String,
    /// Run id without the seed; the unit summarized over seeds.
    pub cell: String,
    pub mode: String,
    pub seed: u64,
    pub sweep: Option<(SweepAxis, f64)>,
    pub status: RunStatus,
    pub epochs: usize,
    /// Mean test reward over the trailing `final_window` epochs.
    pub final_test_reward: Option<f64>,
    pub metrics_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub hash: String,
    pub out_dir: PathBuf,
    pub manifest_path: PathBuf,
    pub summary_path: PathBuf,
    pub timing_path: PathBuf,
    pub runs: Vec<RunOutcome>,
}

struct RunRecorder {
    run_id: String,
    mode: String,
    seed: u64,
    rows: Vec<MetricRow>,
}

impl RunRecorder {
    fn push(&mut self, index: u64, metric: &str, value: f64) {
        self.rows.push(MetricRow {
            run_id: self.run_id.clone(),
            mode: self.mode.clone(),
            seed: self.seed,
            index,
            metric: metric.to_string(),
            value,
        });
    }

    fn push_trace(&mut self, trace: Trace) {
        for (slot, metric, value) in trace {
            self.push(slot, &format!("trace_{metric}"), value);
        }
    }

    fn epoch(&mut self, stats: &EpochStats, test: (f64, f64)) {
        let e = stats.epoch as u64;
        self.push(e, "train_reward", stats.episode_reward);
        self.push(e, "test_reward", test.0);
        self.push(e, "test_latency", test.1);
        self.push(e, "actor_objective", stats.actor.objective);
        self.push(e, "q_term", stats.actor.q_term);
        self.push(e, "critic_loss", stats.critic_loss);
        self.push(e, "mean_confidence", stats.actor.mean_confidence);
        self.push(e, "consistency_loss", stats.actor.consistency_loss);
        self.push(e, "consistency_grad_norm", stats.actor.consistency_grad_norm);
        self.push(e, "q_scale", stats.actor.q_scale);
        self.push(e, "constraint_violations", stats.constraint_violations as f64);
        self.push(e, "gradient_steps", stats.gradient_steps as f64);
    }
}

fn save_checkpoint(path: &Path, trainer: &Trainer) -> Result<(), HarnessError> {
    let file = File::create(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_trainer(&mut BufWriter::new(file), trainer)?;
    Ok(())
}

struct CellResult {
    status: RunStatus,
    epochs: usize,
    tests: Vec<f64>,
    timing: Vec<(String, u64, f64)>,
}

fn run_learner(cfg: &ExperimentConfig, rec: &mut RunRecorder, mode: crate::learner::Mode) -> Result<CellResult, HarnessError> {
    let mut tc = cfg.trainer.clone();
    tc.mode = mode;
    let mut env = Env::new(cfg.world.clone(), cfg.trust.clone())?;
    let mut test_env = env.clone();
    let mut trainer = Trainer::new(tc, env.observation_dim(), env.action_dim(), rec.seed)?;
    let mut rng = eval_rng(rec.seed);
    let mut res = CellResult {
        status: RunStatus::Completed,
        epochs: 0,
        tests: Vec::new(),
        timing: Vec::new(),
    };
    for epoch in 0..cfg.trainer.epochs {
        let start = Instant::now();
        let stats = match trainer.train_epoch(&mut env) {
            Ok(s) => s,
            Err(LearnerError::Divergence(message)) => {
                let path = cfg.out_dir.join(format!("{}.diverged.ckpt", rec.run_id));
                let message = match save_checkpoint(&path, &trainer) {
                    Ok(()) => format!("{message}; state saved to {}", path.display()),
                    Err(e) => format!("{message}; saving state failed: {e}"),
                };
                rec.push(epoch as u64, "diverged", 1.0);
                res.status = RunStatus::Diverged { epoch, message };
                return Ok(res);
            }
            Err(e) => {
                res.status = RunStatus::Failed(e.to_string());
                return Ok(res);
            }
        };
        let seconds = start.elapsed().as_secs_f64();
        let test = test_policy(&Policy::Learned(&trainer), &mut test_env, cfg.eval_episodes, &mut rng)?;
        rec.epoch(&stats, test);
        res.tests.push(test.0);
        res.timing.push((rec.run_id.clone(), epoch as u64, seconds));
        res.epochs = epoch + 1;
        if cfg.checkpoint_every > 0 && res.epochs.is_multiple_of(cfg.checkpoint_every) {
            save_checkpoint(&cfg.out_dir.join(format!("{}.ckpt", rec.run_id)), &trainer)?;
        }
    }
    save_checkpoint(&cfg.out_dir.join(format!("{}.ckpt", rec.run_id)), &trainer)?;
    if cfg.trace_reputation {
        let mut trace = Trace::new();
        run_episode(&Policy::Learned(&trainer), &mut test_env, EVAL_SEED_BASE, &mut rng, Some(&mut trace))?;
        rec.push_trace(trace);
    }
    Ok(res)
}

fn run_random(cfg: &ExperimentConfig, rec: &mut RunRecorder) -> Result<CellResult, HarnessError> {
    let mut env = Env::new(cfg.world.clone(), cfg.trust.clone())?;
    let mut test_env = env.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(rec.seed);
    let mut test_rng = eval_rng(rec.seed);
    let mut res = CellResult {
        status: RunStatus::Completed,
        epochs: 0,
        tests: Vec::new(),
        timing: Vec::new(),
    };
    for epoch in 0..cfg.trainer.epochs {
        let start = Instant::now();
        let mut train = 0.0;
        let mut violations = 0;
        for _ in 0..cfg.trainer.trajectories_per_epoch {
            let seed = rng.random::<u64>();
            let ep = run_episode(&Policy::Random, &mut env, seed, &mut rng, None)?;
            train += ep.reward;
            violations += ep.violations;
        }
        let seconds = start.elapsed().as_secs_f64();
        let test = test_policy(&Policy::Random, &mut test_env, cfg.eval_episodes, &mut test_rng)?;
        let e = epoch as u64;
        rec.push(e, "train_reward", train / cfg.trainer.trajectories_per_epoch as f64);
        rec.push(e, "test_reward", test.0);
        rec.push(e, "test_latency", test.1);
        rec.push(e, "constraint_violations", violations as f64);
        rec.push(e, "gradient_steps", 0.0);
        res.tests.push(test.0);
        res.timing.push((rec.run_id.clone(), e, seconds));
        res.epochs = epoch + 1;
    }
    if cfg.trace_reputation {
        let mut trace = Trace::new();
        run_episode(&Policy::Random, &mut test_env, EVAL_SEED_BASE, &mut test_rng, Some(&mut trace))?;
        rec.push_trace(trace);
    }
    Ok(res)
}

fn create_dir(dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn cells(cfg: &ExperimentConfig) -> Vec<Option<(SweepAxis, f64)>> {
    match cfg.sweep_axis {
        Some(axis) => cfg.sweep_values.iter().map(|&v| Some((axis, v))).collect(),
        None => vec![None],
    }
}

/// Trains (or, for `random`, just evaluates) every mode × seed × sweep
/// value, writing one metric file per run, `summary.csv`, `timing.csv`
/// and `manifest.toml` into `cfg.out_dir`. A diverging or failing run is
/// recorded in the manifest and the remaining runs still execute.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, HarnessError> {
    cfg.validate()?;
    create_dir(&cfg.out_dir)?;
    let mut runs = Vec::new();
    let mut all_rows = Vec::new();
    let mut timing = Vec::new();
    for sweep in cells(cfg) {
        let cell_cfg = cfg.cell(sweep);
        for &mode in &cfg.modes {
            for &seed in &cfg.seeds {
                let id = run_id(mode.name(), seed, sweep);
                let mut rec = RunRecorder {
                    run_id: id.clone(),
                    mode: mode.name().into(),
                    seed,
                    rows: Vec::new(),
                };
                let res = match mode {
                    RunMode::Learner(m) => run_learner(&cell_cfg, &mut rec, m)?,
                    RunMode::Random => run_random(&cell_cfg, &mut rec)?,
                };
                let final_test_reward = (res.status == RunStatus::Completed && !res.tests.is_empty()).then(|| {
                    let tail = &res.tests[res.tests.len().saturating_sub(cfg.final_window)..];
                    tail.iter().sum::<f64>() / tail.len() as f64
                });
                if let Some(r) = final_test_reward {
                    rec.push(res.epochs as u64, "final_test_reward", r);
                }
                let metrics_path = cfg.out_dir.join(format!("{id}.csv"));
                write_metrics(&metrics_path, &rec.rows)?;
                all_rows.extend(rec.rows);
                timing.extend(res.timing);
                runs.push(RunOutcome {
                    run_id: id,
                    cell: cell_label(mode.name(), sweep),
                    mode: mode.name().into(),
                    seed,
                    sweep,
                    status: res.status,
                    epochs: res.epochs,
                    final_test_reward,
                    metrics_path,
                });
            }
        }
    }
    finish(cfg, runs, &all_rows, &timing)
}

fn finish(
    cfg: &ExperimentConfig,
    runs: Vec<RunOutcome>,
    rows: &[MetricRow],
    timing: &[(String, u64, f64)],
) -> Result<ExperimentReport, HarnessError> {
    let cell_of = |r: &MetricRow| {
        runs.iter()
            .find(|o| o.run_id == r.run_id)
            .map_or_else(|| r.run_id.clone(), |o| o.cell.clone())
    };
    let summary_path = cfg.out_dir.join("summary.csv");
    write_summary(&summary_path, &summarize(rows, cell_of))?;
    let timing_path = cfg.out_dir.join("timing.csv");
    write_timing(&timing_path, timing)?;
    let manifest_path = cfg.out_dir.join("manifest.toml");
    let hash = cfg.content_hash();
    write_manifest(&manifest_path, cfg, &hash, &runs)?;
    Ok(ExperimentReport {
        hash,
        out_dir: cfg.out_dir.clone(),
        manifest_path,
        summary_path,
        timing_path,
        runs,
    })
}

fn write_manifest(path: &Path, cfg: &ExperimentConfig, hash: &str, runs: &[RunOutcome]) -> Result<(), HarnessError> {
    let strings = |items: Vec<String>| Value::Array(items.into_iter().map(Value::String).collect());
    let mut text = String::from("# resolved configuration; `agentmig replay --config <this file>` reruns it\n");
    text.push_str(&cfg.render());
    text.push_str(&format!("manifest.hash = {}\n", Value::String(hash.into())));
    text.push_str(&format!(
        "manifest.version = {}\n",
        Value::String(env!("CARGO_PKG_VERSION").into())
    ));
    text.push_str(&format!(
        "manifest.runs = {}\n",
        strings(runs.iter().map(|r| r.run_id.clone()).collect())
    ));
    text.push_str(&format!(
        "manifest.status = {}\n",
        strings(runs.iter().map(|r| r.status.describe()).collect())
    ));
    fs::write(path, text).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Plays `experiment.eval_policy` on `eval_episodes` fixed scenarios per
/// seed and sweep value, logging episode rewards, latencies and a per-slot
/// trace of the first scenario.
pub fn evaluate(cfg: &ExperimentConfig) -> Result<ExperimentReport, HarnessError> {
    cfg.validate()?;
    create_dir(&cfg.out_dir)?;
    let label = format!("eval-{}", cfg.eval_policy.name());
    let mut runs = Vec::new();
    let mut all_rows = Vec::new();
    for sweep in cells(cfg) {
        let cell_cfg = cfg.cell(sweep);
        for &seed in &cfg.seeds {
            let mut env = Env::new(cell_cfg.world.clone(), cell_cfg.trust.clone())?;
            let trainer = match cfg.eval_policy {
                EvalPolicy::Actor => {
                    let path = &cfg.policy_checkpoint;
                    let file = File::open(path).map_err(|source| HarnessError::Io {
                        path: path.clone(),
                        source,
                    })?;
                    let t = read_trainer(&mut std::io::BufReader::new(file), cell_cfg.trainer.clone(), seed)?;
                    if (t.obs_dim(), t.action_dim()) != (env.observation_dim(), env.action_dim()) {
                        return Err(LearnerError::DimensionMismatch {
                            expected: (t.obs_dim(), t.action_dim()),
                            actual: (env.observation_dim(), env.action_dim()),
                        }
                        .into());
                    }
                    Some(t)
                }
                _ => None,
            };
            let policy = match (&trainer, cfg.eval_policy) {
                (Some(t), _) => Policy::Learned(t),
                (None, EvalPolicy::Random) => Policy::Random,
                _ => Policy::Stay,
            };
            let id = run_id(&label, seed, sweep);
            let mut rec = RunRecorder {
                run_id: id.clone(),
                mode: label.clone(),
                seed,
                rows: Vec::new(),
            };
            let mut rng = eval_rng(seed);
            let mut trace = Trace::new();
            let mut total = 0.0;
            for i in 0..cfg.eval_episodes {
                let want_trace = (i == 0 && cfg.trace_reputation).then_some(&mut trace);
                let ep = run_episode(&policy, &mut env, EVAL_SEED_BASE + i as u64, &mut rng, want_trace)?;
                rec.push(i as u64, "episode_reward", ep.reward);
                rec.push(i as u64, "episode_latency", ep.latency);
                rec.push(i as u64, "constraint_violations", ep.violations as f64);
                total += ep.reward;
            }
            let mean = total / cfg.eval_episodes as f64;
            rec.push(0, "test_reward", mean);
            rec.push_trace(trace);
            let metrics_path = cfg.out_dir.join(format!("{id}.csv"));
            write_metrics(&metrics_path, &rec.rows)?;
            all_rows.extend(rec.rows);
            runs.push(RunOutcome {
                run_id: id,
                cell: cell_label(&label, sweep),
                mode: label.clone(),
                seed,
                sweep,
                status: RunStatus::Completed,
                epochs: 0,
                final_test_reward: Some(mean),
                metrics_path,
            });
        }
    }
    finish(cfg, runs, &all_rows, &[])
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub report: ExperimentReport,
    /// Whether each rerun metric file is byte-identical to the original.
    pub identical: Vec<(String, bool)>,
}

/// Reruns the experiment recorded in `manifest` into `out` (default: a
/// `replay` directory beside the manifest) and compares metric files.
pub fn replay(manifest: &Path, out: Option<PathBuf>) -> Result<ReplayReport, HarnessError> {
    let text = fs::read_to_string(manifest).map_err(|source| HarnessError::Io {
        path: manifest.to_path_buf(),
        source,
    })?;
    let (meta, pairs): (Vec<_>, Vec<_>) = parse_document(&text)?
        .into_iter()
        .partition(|(k, _)| k.starts_with("manifest."));
    let mut cfg = ExperimentConfig::from_pairs(&pairs)?;
    let recorded = meta
        .iter()
        .find(|(k, _)| k == "manifest.hash")
        .and_then(|(_, v)| v.as_str())
        .ok_or_else(|| HarnessError::Manifest("missing manifest.hash".into()))?;
    let hash = cfg.content_hash();
    if hash != recorded {
        return Err(HarnessError::Manifest(format!(
            "configuration hash {hash} does not match recorded {recorded}"
        )));
    }
    let original = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    cfg.out_dir = out.unwrap_or_else(|| original.join("replay"));
    let report = if meta
        .iter()
        .any(|(k, v)| k == "manifest.runs" && v.as_array().is_some_and(|a| a.iter().any(|r| r.as_str().is_some_and(|s| s.starts_with("eval-")))))
    {
        evaluate(&cfg)?
    } else {
        run_experiment(&cfg)?
    };
    let identical = report
        .runs
        .iter()
        .map(|r| {
            let a = fs::read(original.join(format!("{}.csv", r.run_id)));
            let b = fs::read(&r.metrics_path);
            let same = matches!((a, b), (Ok(a), Ok(b)) if a == b);
            (r.run_id.clone(), same)
        })
        .collect();
    Ok(ReplayReport { report, identical })
}
