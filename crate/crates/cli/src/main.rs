use std::path::PathBuf;
use std::process::ExitCode;

use agentmig::harness::{
    evaluate, load_config, replay, run_experiment, ExperimentConfig, ExperimentReport, HarnessError, RunMode,
    RunStatus, SweepAxis,
};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "agentmig", version, about = "Trust-aware AI-agent migration experiments")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Train the configured modes over all seeds.
    Train(Common),
    /// Train cgdm, no-con, no-dc and gdm side by side.
    Ablate(Common),
    /// Train over the values of one swept quantity.
    Sweep(Common),
    /// Play a fixed policy (random, stay, or a checkpointed actor).
    Evaluate(Common),
    /// Rerun a recorded manifest and compare its metric files.
    Replay {
        /// Manifest written by an earlier run.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Flat key/value configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run this single seed instead of `experiment.seeds`.
    #[arg(long)]
    seed: Option<u64>,
    /// cgdm, no-con, no-dc, gdm or random.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// data-size, bandwidth, compute, attack-frequency or denoising-steps.
    #[arg(long)]
    sweep_axis: Option<String>,
    /// Comma-separated values, e.g. 100,200,300.
    #[arg(long, value_delimiter = ',')]
    sweep_values: Option<Vec<f64>>,
}

fn flag_error(key: &str, message: String) -> HarnessError {
    HarnessError::Config {
        key: key.into(),
        message,
    }
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig, HarnessError> {
        let mut cfg = match &self.config {
            Some(path) => load_config(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seeds = vec![seed];
        }
        if let Some(name) = &self.mode {
            let mode = RunMode::parse(name).ok_or_else(|| flag_error("--mode", format!("unknown mode \"{name}\"")))?;
            cfg.modes = vec![mode];
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if let Some(name) = &self.sweep_axis {
            let axis =
                SweepAxis::parse(name).ok_or_else(|| flag_error("--sweep-axis", format!("unknown axis \"{name}\"")))?;
            cfg.sweep_axis = Some(axis);
        }
        if let Some(values) = &self.sweep_values {
            cfg.sweep_values = values.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_report(report: &ExperimentReport) -> bool {
    let mut ok = true;
    for r in &report.runs {
        let status = match &r.status {
            RunStatus::Completed => "completed".to_string(),
            RunStatus::Diverged { epoch, message } => {
                ok = false;
                format!("DIVERGED at epoch {epoch}: {message}")
            }
            RunStatus::Failed(m) => {
                ok = false;
                format!("FAILED: {m}")
            }
        };
        match r.final_test_reward {
            Some(v) => println!("{:<32} {status}, final test reward {v:.2}", r.run_id),
            None => println!("{:<32} {status}", r.run_id),
        }
    }
    println!("manifest {} (hash {})", report.manifest_path.display(), report.hash);
    println!("summary  {}", report.summary_path.display());
    ok
}

fn run(cli: Cli) -> Result<bool, HarnessError> {
    match cli.verb {
        Verb::Train(c) => Ok(print_report(&run_experiment(&c.resolve()?)?)),
        Verb::Ablate(c) => {
            let mut cfg = c.resolve()?;
            if c.mode.is_none() {
                cfg.modes = RunMode::ablation();
            }
            Ok(print_report(&run_experiment(&cfg)?))
        }
        Verb::Sweep(c) => {
            let cfg = c.resolve()?;
            if cfg.sweep_axis.is_none() {
                return Err(flag_error("--sweep-axis", "sweep needs an axis and values".into()));
            }
            Ok(print_report(&run_experiment(&cfg)?))
        }
        Verb::Evaluate(c) => Ok(print_report(&evaluate(&c.resolve()?)?)),
        Verb::Replay { config, out } => {
            let rep = replay(&config, out)?;
            let mut ok = print_report(&rep.report);
            for (id, same) in &rep.identical {
                println!("{id:<32} {}", if *same { "identical" } else { "DIFFERS" });
                ok &= same;
            }
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
