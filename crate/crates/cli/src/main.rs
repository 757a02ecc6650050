//! `apln`: train, corrupt, fuse, export and synthesize from the command line.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use apln_core::data::CorruptionSpec;
use apln_core::FusionMode;
use clap::{Parser, Subcommand};

use crate::commands::ExportKind;
use crate::config::RunConfig;
use crate::error::{CliError, CliResult, EXIT_USAGE};

#[derive(Parser)]
#[command(
    name = "apln",
    version,
    about = "Conflict-aware evidential fusion for incomplete multi-view data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run UMAE-F, UMAE-V and UMAE-J from a TOML or JSON config file.
    Train {
        /// Config file (`.toml` or `.json`).
        config: PathBuf,
        /// Output directory [default: `output` from the config]
        #[arg(long)]
        output: Option<PathBuf>,
        /// Root seed [default: `seed` from the config]
        #[arg(long)]
        seed: Option<u64>,
        /// Missing rate [default: `corruption.eta` from the config]
        #[arg(long)]
        eta: Option<f64>,
        /// Conflict fraction [default: `corruption.conflict_fraction` from the config]
        #[arg(long)]
        conflict_fraction: Option<f64>,
        /// Epochs per phase as F,V,J [default: from the config]
        #[arg(long, value_delimiter = ',')]
        epochs: Option<Vec<usize>>,
        /// Also train the zero- and mean-imputation baselines [default: from the config]
        #[arg(long)]
        baselines: bool,
    },
    /// Inject conflicting views and mask views of a dataset directory.
    Corrupt {
        /// Input dataset directory.
        dataset: PathBuf,
        /// Fraction of view instances to mark missing.
        #[arg(long, default_value_t = 0.0)]
        eta: f64,
        /// Fraction of rows that receive one view from a different-class donor.
        #[arg(long, default_value_t = 0.4)]
        conflict_fraction: f64,
        /// Seed for donor choice and masking.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fuse a JSON array of opinions and print the result.
    Fuse {
        /// JSON file holding `[{"belief": [..], "uncertainty": u, "base_rate": [..]}, ..]`.
        opinions: PathBuf,
        /// Fusion rule.
        #[arg(long, default_value = "balanced", value_parser = ["balanced", "sequential"])]
        mode: String,
    },
    /// Write per-phase CSVs from a finished run directory.
    Export {
        /// Run directory produced by `train`.
        run: PathBuf,
        /// What to export; repeat for several [default: all]
        #[arg(long, value_enum)]
        what: Vec<ExportKind>,
        /// Destination directory [default: <run>/export]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a Gaussian multi-view dataset.
    Synth {
        #[arg(long, default_value_t = 2000)]
        samples: usize,
        #[arg(long, default_value_t = 6)]
        views: usize,
        #[arg(long, default_value_t = 10)]
        classes: usize,
        /// Features per view.
        #[arg(long, default_value_t = 8)]
        dim: usize,
        /// Norm of each class mean.
        #[arg(long, default_value_t = 2.5)]
        separation: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Train {
            config,
            output,
            seed,
            eta,
            conflict_fraction,
            epochs,
            baselines,
        } => {
            let mut cfg = RunConfig::from_file(&config)?;
            if let Some(o) = output {
                cfg.output = o;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(e) = eta {
                cfg.corruption.eta = e;
            }
            if let Some(c) = conflict_fraction {
                cfg.corruption.conflict_fraction = c;
            }
            if let Some(e) = epochs {
                if e.len() != 3 {
                    return Err(CliError::usage("--epochs takes three values: F,V,J"));
                }
                (cfg.train.epochs_f, cfg.train.epochs_v, cfg.train.epochs_j) = (e[0], e[1], e[2]);
            }
            cfg.baselines |= baselines;
            let cfg = cfg.resolved();
            let out = commands::train(&cfg)?;
            println!("{}", out.display());
        }
        Command::Corrupt {
            dataset,
            eta,
            conflict_fraction,
            seed,
            out,
        } => {
            let spec = CorruptionSpec {
                eta,
                conflict_fraction,
                seed,
            };
            let summary = commands::corrupt(&dataset, &spec, &out)?;
            print_json(&summary)?;
        }
        Command::Fuse { opinions, mode } => {
            let mode: FusionMode = mode.parse().map_err(|e| CliError::usage(format!("{e}")))?;
            print_json(&commands::fuse(&opinions, mode)?)?;
        }
        Command::Export { run, what, out } => {
            let kinds = if what.is_empty() {
                vec![
                    ExportKind::Uncertainty,
                    ExportKind::Conflict,
                    ExportKind::Evidence,
                ]
            } else {
                what
            };
            let out = out.unwrap_or_else(|| run.join("export"));
            for path in commands::export(&run, &kinds, &out)? {
                println!("{}", path.display());
            }
        }
        Command::Synth {
            samples,
            views,
            classes,
            dim,
            separation,
            seed,
            out,
        } => {
            let ds = commands::synth(samples, views, classes, dim, separation, seed, &out)?;
            print_json(&ds.manifest())?;
        }
    }
    Ok(())
}

fn print_json<T: serde::Serialize>(value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::data(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("apln: {e}");
            ExitCode::from(e.code)
        }
    }
}
