use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rtcnet::net::Ablation;

mod config;
mod eval;
mod infer;
mod simulate;
mod train;

/// Radar target classification pipeline: simulate data, train, run
/// inference and score the results.
#[derive(Debug, Parser)]
#[command(name = "rtcnet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Ten binary networks combined by voting.
    Ensemble,
    /// One four-way network.
    Multiclass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Level {
    Target,
    Object,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AblationArg {
    NoRcs,
    NoSpeed,
    NoLowLevel,
}

impl From<AblationArg> for Ablation {
    fn from(a: AblationArg) -> Self {
        match a {
            AblationArg::NoRcs => Ablation::NoRcs,
            AblationArg::NoSpeed => Ablation::NoSpeed,
            AblationArg::NoLowLevel => Ablation::NoLowLevel,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Simulate {
        /// Simulator TOML (see configs/sim-*.toml).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        frames: usize,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a classifier on a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "ensemble")]
        mode: Mode,
        /// Defaults to the config value (10 in the shipped config).
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        ablation: Option<AblationArg>,
        /// Run configuration; the built-in defaults when absent.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Classify and cluster every frame of a dataset.
    Infer {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Detections file (JSON lines).
        #[arg(long)]
        out: PathBuf,
        /// Classify targets only.
        #[arg(long)]
        no_cluster: bool,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Score detections against a dataset's annotations.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, value_enum, default_value = "target")]
        level: Level,
        /// Report directory.
        #[arg(long)]
        out: PathBuf,
        /// Add range-binned F1 with the given bin width in meters.
        #[arg(long, num_args = 0..=1, default_missing_value = "5.0", value_name = "METERS")]
        range_bins: Option<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Object F1 of two clustering parameter sets on the same classified targets.
    ClusterCompare {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        class_specific: PathBuf,
        #[arg(long)]
        universal: PathBuf,
        /// Report directory.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Builds the global worker pool, capped by RTC_THREADS when set.
fn init_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("RTC_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("RTC_THREADS must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn run(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Simulate {
            config,
            out,
            frames,
            seed,
        } => simulate::run(&config, &out, frames, seed),
        Command::Train {
            data,
            out,
            mode,
            epochs,
            seed,
            ablation,
            config,
        } => train::run(&train::Args {
            data,
            out,
            mode,
            epochs,
            seed,
            ablation: ablation.map(Into::into),
            config,
        }),
        Command::Infer {
            data,
            model,
            out,
            no_cluster,
            config,
        } => infer::run(&data, &model, &out, no_cluster, config.as_deref()),
        Command::Eval {
            pred,
            gt,
            level,
            out,
            range_bins,
            config,
        } => eval::run(&pred, &gt, level, &out, range_bins, config.as_deref()),
        Command::ClusterCompare {
            pred,
            gt,
            class_specific,
            universal,
            out,
        } => eval::cluster_compare(&pred, &gt, &class_specific, &universal, &out),
    }
}

fn main() -> ExitCode {
    // Usage errors exit with status 2 from inside `parse`.
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
