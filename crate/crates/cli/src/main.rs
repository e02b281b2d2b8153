use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use fdrc_cli::commands::{self, CompareArgs, ExportArgs, RolloutArgs, SimArgs, TrainArgs};
use fdrc_core::Precision;

#[derive(Parser)]
#[command(name = "fdrc", version, about = "Label-free training and evaluation of 2D acoustic wave surrogates")]
struct Cli {
    /// Zero the wall-clock column so repeated runs write identical files.
    #[arg(long, global = true)]
    reproducible: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a surrogate; writes model.wnet, pool.wfld, train_state.json and metrics.csv.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue a run from the directory it was saved to.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        precision: Option<Precision>,
    },
    /// Run the finite-difference oracle and write snapshot files.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        steps: u64,
        #[arg(long, default_value_t = 1)]
        stride: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed for drawing sources when the config has none.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        precision: Option<Precision>,
    },
    /// Roll a trained surrogate forward and write snapshot files.
    Rollout {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        steps: u64,
        #[arg(long, default_value_t = 1)]
        stride: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        precision: Option<Precision>,
    },
    /// Compare a surrogate against the oracle over a set of cases.
    Compare {
        #[arg(long, required_unless_present = "oracle")]
        model: Option<PathBuf>,
        /// Compare the oracle with itself instead of loading a model.
        #[arg(long, conflicts_with = "model")]
        oracle: bool,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        cases: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        stride: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        precision: Option<Precision>,
    },
    /// Convert one snapshot channel to csv or pgm.
    Export {
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long)]
        format: String,
        #[arg(long, default_value = "p")]
        channel: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("FDRC_THREADS") {
        let n: usize = v.trim().parse().with_context(|| format!("FDRC_THREADS must be a positive integer, got `{v}`"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::Train { config, out, resume, seed, precision } => commands::train(&TrainArgs {
            config: config.as_deref(),
            out: out.as_deref(),
            resume: resume.as_deref(),
            seed,
            precision,
            reproducible: cli.reproducible,
        }),
        Command::Simulate { config, steps, stride, out, seed, precision } => {
            let files = commands::simulate(&SimArgs { config: &config, steps, stride, out: out.as_deref(), seed, precision })?;
            eprintln!("wrote {} snapshots", files.len());
            Ok(())
        }
        Command::Rollout { model, config, steps, stride, out, seed, precision } => {
            let files = commands::rollout(&RolloutArgs { model: &model, config: &config, steps, stride, out: out.as_deref(), seed, precision })?;
            eprintln!("wrote {} snapshots", files.len());
            Ok(())
        }
        Command::Compare { model, oracle: _, config, cases, stride, out, precision } => {
            let report = commands::compare(&CompareArgs {
                model: model.as_deref(),
                config: &config,
                cases: cases.as_deref(),
                stride,
                out: out.as_deref(),
                precision,
            })?;
            for c in &report.cases {
                eprintln!("case {}: mean MRE {:.3}%, mean loss {:e}", c.case_id, c.mean_mre_p, c.mean_fdrc_loss);
            }
            Ok(())
        }
        Command::Export { snapshot, format, channel, out } => {
            commands::export(&ExportArgs { snapshot: &snapshot, format: &format, channel: &channel, out: &out })
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
