use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use d4pg::experiment::{run_eval, run_train, ExperimentConfig, RawConfig, ResumeOptions};
use d4pg::Error;

const USAGE: u8 = 2;
const ABORT: u8 = 3;

#[derive(Parser)]
#[command(name = "d4pg", version, about = "Distributed distributional deterministic policy gradients")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent, writing metrics.csv and checkpoint.bin under --out.
    Train {
        #[command(flatten)]
        settings: Settings,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Resume even if the checkpoint's configuration differs.
        #[arg(long, requires = "resume")]
        force: bool,
    },
    /// Evaluate the policy stored in a checkpoint without exploration noise.
    Eval {
        #[command(flatten)]
        settings: Settings,
        /// Checkpoint to load (default: <out>/checkpoint.bin).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run the quick numerical self-checks.
    Selftest,
}

#[derive(Args)]
struct Settings {
    /// Flat `key = value` config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    env: Option<String>,
    #[arg(long, value_parser = ["categorical", "mog", "scalar"])]
    head: Option<String>,
    #[arg(long)]
    prioritized: Option<bool>,
    #[arg(long)]
    nstep: Option<usize>,
    #[arg(long)]
    actors: Option<usize>,
    #[arg(long)]
    atoms: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    vmin: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    vmax: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    actor_lr: Option<f64>,
    #[arg(long)]
    critic_lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    replay: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    eval_every: Option<u64>,
    /// Single-threaded round-robin scheduling; bit-reproducible.
    #[arg(long)]
    deterministic: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Any other config key, as KEY=VALUE (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Settings {
    fn resolve(&self) -> d4pg::Result<ExperimentConfig> {
        let file = match &self.config {
            Some(p) => RawConfig::from_file(p)?,
            None => RawConfig::new(),
        };
        let mut flags = RawConfig::new();
        let mut put = |k: &str, v: Option<String>| -> d4pg::Result<()> {
            if let Some(v) = v {
                flags.set(k, v)?;
            }
            Ok(())
        };
        put("env", self.env.clone())?;
        put("head", self.head.clone())?;
        put("prioritized", self.prioritized.map(|v| v.to_string()))?;
        put("nstep", self.nstep.map(|v| v.to_string()))?;
        put("actors", self.actors.map(|v| v.to_string()))?;
        put("atoms", self.atoms.map(|v| v.to_string()))?;
        put("vmin", self.vmin.map(|v| v.to_string()))?;
        put("vmax", self.vmax.map(|v| v.to_string()))?;
        put("gamma", self.gamma.map(|v| v.to_string()))?;
        put("actor_lr", self.actor_lr.map(|v| v.to_string()))?;
        put("critic_lr", self.critic_lr.map(|v| v.to_string()))?;
        put("batch", self.batch.map(|v| v.to_string()))?;
        put("replay", self.replay.map(|v| v.to_string()))?;
        put("epsilon", self.epsilon.map(|v| v.to_string()))?;
        put("seed", self.seed.map(|v| v.to_string()))?;
        put("steps", self.steps.map(|v| v.to_string()))?;
        put("eval_every", self.eval_every.map(|v| v.to_string()))?;
        put("deterministic", self.deterministic.then(|| "true".to_string()))?;
        put("out", self.out.as_ref().map(|p| p.display().to_string()))?;
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            flags.set(k.trim(), v.trim())?;
        }
        ExperimentConfig::from_raw(&file.merge(&flags))
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => USAGE,
        _ => ABORT,
    }
}

fn fail(e: Error) -> ExitCode {
    let kind = if exit_code(&e) == USAGE { "usage error" } else { "error" };
    eprintln!("{kind}: {e}");
    ExitCode::from(exit_code(&e))
}

fn train(settings: &Settings, resume: Option<PathBuf>, force: bool) -> Result<(), Error> {
    let cfg = settings.resolve()?;
    if cfg.out.is_none() {
        return Err(Error::Config("missing required key `out` (use --out DIR)".into()));
    }
    let resume = resume.map(|checkpoint| ResumeOptions { checkpoint, force });
    let summary = run_train(cfg, resume.as_ref())?;
    for r in &summary.records {
        println!(
            "step {:>8}  actor steps {:>9}  return {:>8.2} +- {:>6.2}  critic loss {:.4}",
            r.learner_steps, r.actor_steps, r.eval_return_mean, r.eval_return_std, r.critic_loss_mean
        );
    }
    println!(
        "finished: {} learner steps, {} actor steps, {} actor faults",
        summary.learner_steps, summary.actor_steps, summary.actor_faults
    );
    Ok(())
}

fn eval(settings: &Settings, checkpoint: Option<PathBuf>) -> Result<(), Error> {
    let cfg = settings.resolve()?;
    let path = match (checkpoint, &cfg.out) {
        (Some(p), _) => p,
        (None, Some(out)) => out.join("checkpoint.bin"),
        (None, None) => return Err(Error::Config("give --checkpoint PATH or --out DIR".into())),
    };
    let report = run_eval(&cfg, &path)?;
    println!("episodes {}", report.returns.len());
    println!("mean {}", report.mean);
    println!("std {}", report.std);
    println!("min {}", report.min);
    println!("max {}", report.max);
    Ok(())
}

fn selftest() -> ExitCode {
    let mut ok = true;
    for c in d4pg::selftest::run() {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        ok &= c.passed;
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(ABORT)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Train { settings, resume, force } => train(&settings, resume, force),
        Command::Eval { settings, checkpoint } => eval(&settings, checkpoint),
        Command::Selftest => return selftest(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e),
    }
}
