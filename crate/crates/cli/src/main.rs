use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mlpip::objectives;
use mlpip::rng::SeededRng;
use mlpip::tasks::write_jsonl;
use mlpip::train::{self, Checkpoint, Dataset, Split, TaskSource, TrainConfig};
use mlpip::{Error, Result};
use serde_json::json;

/// Amortized posterior inference for few-shot learning.
#[derive(Parser)]
#[command(name = "mlpip", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on held-out test episodes.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        way: Option<usize>,
        #[arg(long)]
        shot: Option<usize>,
        #[arg(long, default_value_t = 200)]
        episodes: usize,
    },
    /// Train the linear toy amortization and report KL to the true posterior.
    Toy {
        #[arg(long, default_value_t = 5)]
        shots: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate one checkpoint across ways and shots without retraining.
    Sweep {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "2,5,10,20")]
        ways: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
        shots: Vec<usize>,
        #[arg(long, default_value_t = 200)]
        episodes: usize,
    },
    /// Finite-difference check of every op and the episode pipelines.
    Gradcheck {
        #[arg(long, default_value_t = 10)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write seeded episodes as JSON lines.
    ExportTasks {
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        way: Option<usize>,
        #[arg(long)]
        shot: Option<usize>,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn print(value: serde_json::Value) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, &value)?;
    writeln!(out)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, seed, out } => {
            let mut cfg = TrainConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            let outcome = train::train(&cfg)?;
            print(json!({
                "iterations": outcome.last.iteration,
                "final_val_nll": outcome.last.val_nll,
                "best_val_nll": outcome.best.val_nll,
                "best_iteration": outcome.best.iteration,
                "metrics": outcome.metrics_path,
                "output_dir": cfg.output_dir,
            }))
        }
        Command::Eval {
            checkpoint,
            way,
            shot,
            episodes,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let cfg = &ckpt.config;
            let (way, shot) = (way.unwrap_or(cfg.way), shot.unwrap_or(cfg.shot));
            let source = TaskSource::new(cfg);
            let eps = source.held_out(Split::Test, way, shot, episodes)?;
            let mut rng = SeededRng::stream(cfg.seed, 4);
            let metrics = objectives::evaluate(&ckpt.model(), &eps, cfg.l_test, &train::inference_for(cfg), &mut rng)?;
            print(json!({
                "way": way,
                "shot": shot,
                "episodes": metrics.episodes,
                "nll": metrics.nll,
                "accuracy": metrics.accuracy,
                "gradient_evaluations": metrics.gradient_evaluations,
                "optimizer_steps": metrics.optimizer_steps,
            }))
        }
        Command::Toy {
            shots,
            seed,
            iterations,
            out,
        } => {
            let mut cfg = TrainConfig::preset(Dataset::Toy);
            cfg.shot = shots;
            cfg.seed = seed;
            if let Some(n) = iterations {
                cfg.iterations = n;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            cfg.validate()?;
            let r = train::run_toy_experiment(&cfg)?;
            print(json!({
                "shots": shots,
                "seed": seed,
                "mean_kl": r.mean_kl,
                "max_kl": r.rows.iter().map(|r| r.kl).fold(0.0, f64::max),
                "posteriors": cfg.output_dir.join("toy_posteriors.csv"),
            }))
        }
        Command::Sweep {
            checkpoint,
            ways,
            shots,
            episodes,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let cells = train::run_versatility_sweep(&ckpt.config, &ckpt.model(), &ways, &shots, episodes)?;
            print(serde_json::to_value(cells)?)
        }
        Command::Gradcheck { instances, seed } => {
            let checks = train::gradient_suite(seed, instances)?;
            let worst = checks.iter().map(|c| c.max_error).fold(0.0, f64::max);
            print(json!({ "max_error": worst, "checks": checks }))?;
            if worst >= 1e-4 {
                return Err(Error::Domain {
                    op: "gradcheck".into(),
                    detail: format!("max relative error {worst:e}"),
                });
            }
            Ok(())
        }
        Command::ExportTasks {
            dataset,
            count,
            seed,
            way,
            shot,
            out,
        } => {
            let mut cfg = TrainConfig::preset(Dataset::parse(&dataset)?);
            cfg.seed = seed;
            if let Some(w) = way {
                cfg.way = w;
            }
            if let Some(s) = shot {
                cfg.shot = s;
            }
            cfg.validate()?;
            let episodes = train::export_tasks(&cfg, count)?;
            match out {
                Some(path) => write_jsonl(std::fs::File::create(path)?, &episodes),
                None => write_jsonl(std::io::stdout().lock(), &episodes),
            }
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 3 } else { 2 })
        }
    }
}
