//! `kdprune`: runs, compares and inspects distillation + pruning experiments.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use kdprune::data::synth::{write_cifar_like, write_movie_fixture, ImageSynthConfig};
use kdprune::experiment::{compare, load_checkpoint, preset_names, run_experiment, ExperimentConfig, RunReport, PRESETS};
use kdprune::model::effective_size;
use kdprune::telemetry::{summarize, PowerLog};

#[derive(Parser)]
#[command(name = "kdprune", version, about = "Attention-guided distillation with iterative structured pruning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a config file or preset name.
    Run {
        config: String,
        /// Print the resolved schedule and exit without training.
        #[arg(long)]
        dry_run: bool,
        /// Train only this student seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare run summaries; the first is the baseline.
    Compare {
        #[arg(required = true, num_args = 2..)]
        reports: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Summarize a power log.
    PowerReport {
        log: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Print a checkpoint's architecture and effective size.
    Inspect { checkpoint: PathBuf },
    /// List bundled presets, or print one.
    Presets { name: Option<String> },
    /// Write a synthetic corpus.
    Synth {
        #[command(subcommand)]
        kind: SynthKind,
    },
}

#[derive(Subcommand)]
enum SynthKind {
    /// CIFAR-style binary image batches.
    Images {
        dir: PathBuf,
        #[arg(long, default_value_t = ImageSynthConfig::default().train_per_class)]
        train_per_class: usize,
        #[arg(long, default_value_t = ImageSynthConfig::default().test_per_class)]
        test_per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Movie metadata table.
    Movies {
        path: PathBuf,
        #[arg(long, default_value_t = 2000)]
        rows: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(config: &str, dry_run: bool, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    if let Some(o) = out {
        cfg.output_dir = o;
    }
    cfg.validate()?;
    let schedule = cfg.schedule()?;
    println!("{schedule}");
    if dry_run {
        return Ok(());
    }
    let report = run_experiment(&cfg).with_context(|| format!("running {}", cfg.name))?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    println!("summary written to {}", cfg.output_dir.join("summary.json").display());
    Ok(())
}

fn compare_cmd(paths: &[PathBuf], format: Format) -> Result<()> {
    let reports = paths
        .iter()
        .map(|p| RunReport::load(p).with_context(|| format!("reading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let cmp = compare(&reports)?;
    match format {
        Format::Text => print!("{}", cmp.to_text()),
        Format::Csv => print!("{}", cmp.to_csv()?),
        Format::Json => println!("{}", serde_json::to_string_pretty(&cmp)?),
    }
    Ok(())
}

fn power_report(path: &Path, format: Format) -> Result<()> {
    let s = summarize(&PowerLog::load(path)?);
    match format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&s)?),
        Format::Csv => {
            println!("source,samples,duration_s,mean_watts,energy_j,train_j,inference_j,truncated");
            println!(
                "{},{},{},{},{},{},{},{}",
                s.source, s.samples, s.duration_s, s.mean_watts, s.energy_joules, s.train_joules, s.inference_joules, s.truncated
            );
        }
        Format::Text => {
            println!("source: {}", s.source);
            println!("samples: {} over {:.1} s", s.samples, s.duration_s);
            println!("mean power: {:.2} W", s.mean_watts);
            println!("energy: {:.1} J (train {:.1} J, inference {:.1} J)", s.energy_joules, s.train_joules, s.inference_joules);
            if s.truncated {
                println!("warning: device stopped answering; log is truncated");
            }
        }
    }
    Ok(())
}

fn inspect(path: &Path) -> Result<()> {
    let ck = load_checkpoint(path)?;
    let size = effective_size(&ck.model, &ck.masks)?;
    println!("model: {}", ck.model.spec().label());
    println!("epoch: {} (seed {})", ck.epoch, ck.run_seed);
    println!("channel sparsity: {:.4}", ck.masks.cumulative_sparsity());
    println!(
        "parameters: {} of {} survive ({:.2}% reduction)",
        size.surviving_params,
        size.total_params,
        100.0 * size.reduction_fraction
    );
    Ok(())
}

fn presets(name: Option<String>) -> Result<()> {
    match name {
        None => preset_names().for_each(|n| println!("{n}")),
        Some(n) => match PRESETS.iter().find(|(p, _)| *p == n) {
            Some((_, text)) => print!("{text}"),
            None => bail!("unknown preset {n}"),
        },
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Run {
            config,
            dry_run,
            seed,
            out,
        } => run(&config, dry_run, seed, out),
        Command::Compare { reports, format } => compare_cmd(&reports, format),
        Command::PowerReport { log, format } => power_report(&log, format),
        Command::Inspect { checkpoint } => inspect(&checkpoint),
        Command::Presets { name } => presets(name),
        Command::Synth { kind } => match kind {
            SynthKind::Images {
                dir,
                train_per_class,
                test_per_class,
                seed,
            } => {
                let cfg = ImageSynthConfig {
                    train_per_class,
                    test_per_class,
                    seed,
                    ..ImageSynthConfig::default()
                };
                write_cifar_like(&dir, &cfg)?;
                println!("wrote {}", dir.display());
                Ok(())
            }
            SynthKind::Movies { path, rows, seed } => {
                if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                    fs::create_dir_all(parent)?;
                }
                write_movie_fixture(&path, rows, seed)?;
                println!("wrote {}", path.display());
                Ok(())
            }
        },
    }
}
