use std::path::{Path, PathBuf};
use std::process::ExitCode;

use amber_core::experiment::{
    ablate, evaluate_checkpoint, generate, language_counts, load_dataset, train, write_report, ExperimentConfig,
    Start, Task,
};
use amber_core::objectives::Objectives;
use amber_core::trainer::MetricsRecord;
use amber_core::{Error, Result};
use clap::{Args, Parser, Subcommand};

/// Train and evaluate a miniature multilingual encoder on synthetic cipher languages.
#[derive(Parser)]
#[command(name = "amber-mini", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML). Every field is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpora into <out>/data.
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Train into <out>/train.
    Train {
        #[command(flatten)]
        common: Common,
        /// Comma list drawn from mlm, tlm, wa, sa.
        #[arg(long)]
        objectives: Option<String>,
        /// Total optimiser steps; shrinks warmup to a tenth if it would not fit
        #[arg(long)]
        steps: Option<u64>,
        /// Corpus directory (default <out>/data).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Resume this checkpoint up to the configured step count.
        #[arg(long, conflicts_with = "phase2_from")]
        checkpoint: Option<PathBuf>,
        /// Start a second phase from these parameters with a fresh optimiser and schedule.
        #[arg(long)]
        phase2_from: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on one task; writes <out>/eval/<task>.json.
    Eval {
        #[command(flatten)]
        common: Common,
        /// retrieve, align or transfer.
        #[arg(long)]
        task: String,
        /// Checkpoint to evaluate (default <out>/train/final.ckpt).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Corpus directory (default <out>/data).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train and evaluate the four-rung objective ladder; writes <out>/ablate.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Steps per rung
        #[arg(long)]
        steps: Option<u64>,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

/// `--steps` keeps the configured warmup unless it no longer fits, in which
/// case warmup becomes a tenth of the run.
fn override_steps(cfg: &mut ExperimentConfig, steps: u64) {
    cfg.train.steps = steps;
    if steps > 0 && cfg.train.warmup_steps >= steps {
        cfg.train.warmup_steps = steps / 10;
        eprintln!("note: warmup_steps set to {} for a {steps}-step run", cfg.train.warmup_steps);
    }
}

fn reporter(total: u64) -> impl FnMut(&MetricsRecord) {
    let every = (total / 20).max(1);
    move |r| {
        if (r.step + 1) % every == 0 || r.step + 1 == total {
            eprintln!(
                "step {:>6}  lr {:.2e}  mlm {:.4}  sa {:.4}  wa {:.4}  total {:.4}",
                r.step + 1,
                r.lr,
                r.mlm,
                r.sa,
                r.wa,
                r.total
            );
        }
    }
}

fn data_dir(cfg: &ExperimentConfig, data: Option<PathBuf>) -> PathBuf {
    data.unwrap_or_else(|| cfg.data_dir())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { common } => {
            let mut cfg = load_config(&common)?;
            cfg.resolve()?;
            let dir = cfg.data_dir();
            let (data, manifest) = generate(&cfg, &dir)?;
            for c in language_counts(&data) {
                println!("{}\tmono {}\tparallel {}\theld_out {}", c.tag, c.mono, c.parallel, c.held_out);
            }
            println!("probe {}\tcorpus {}\t{}", data.probe.len(), manifest.corpus_sha256, dir.display());
        }
        Command::Train {
            common,
            objectives,
            steps,
            data,
            checkpoint,
            phase2_from,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(o) = objectives {
                cfg.train.objectives = o
                    .parse::<Objectives>()
                    .map_err(|e| Error::config("--objectives", e))?;
            }
            if let Some(s) = steps {
                override_steps(&mut cfg, s);
            }
            cfg.resolve()?;
            let (dataset, _) = load_dataset(&cfg, &data_dir(&cfg, data))?;
            let start = match (checkpoint, phase2_from) {
                (Some(p), _) => Start::Resume(p),
                (_, Some(p)) => Start::Phase2(p),
                _ => Start::Fresh,
            };
            let out = cfg.train_dir();
            let outcome = train(&cfg, &dataset, &out, &start, reporter(cfg.train.steps))?;
            let total = outcome.last.map(|r| format!("{:.4}", r.total)).unwrap_or_else(|| "-".into());
            println!(
                "trained {} steps ({})\tfinal total {}\t{}",
                outcome.steps,
                cfg.train.objectives.label(),
                total,
                outcome.final_checkpoint.display()
            );
        }
        Command::Eval {
            common,
            task,
            checkpoint,
            data,
        } => {
            let mut cfg = load_config(&common)?;
            let task: Task = task.parse()?;
            cfg.resolve()?;
            let (dataset, _) = load_dataset(&cfg, &data_dir(&cfg, data))?;
            let ckpt = checkpoint.unwrap_or_else(|| cfg.train_dir().join("final.ckpt"));
            let report = evaluate_checkpoint(&cfg, &dataset, &ckpt, task)?;
            let path = cfg.out_dir.join("eval").join(format!("{}.json", task.name()));
            write_report(&path, &report)?;
            println!("{}\t{}", report.summary_line(), path.display());
        }
        Command::Ablate { common, steps } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = steps {
                override_steps(&mut cfg, s);
            }
            cfg.resolve()?;
            let out = cfg.out_dir.join("ablate");
            let mut current = String::new();
            let mut report = reporter(cfg.train.steps);
            let result = ablate(&cfg, &out, |label, r| {
                if label != current {
                    eprintln!("rung {label}");
                    current = label.to_string();
                }
                report(r)
            })?;
            for r in &result.rungs {
                println!(
                    "{}\tretrieval {:.4}\tmean AER {:.4}\ttagging {:.4}",
                    r.label,
                    r.retrieval(),
                    r.mean_aer(),
                    r.tagging()
                );
            }
            println!("{}", Path::new(&out).join("table.tsv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[config]: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let c = e.category();
            eprintln!("error[{}]: {}", c.tag(), e.to_string().replace('\n', "; "));
            ExitCode::from(c.exit_code() as u8)
        }
    }
}
