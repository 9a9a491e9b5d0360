//! Command-line entry point.
//!
//! Exit codes: 0 success, 2 configuration error, 3 checkpoint version
//! mismatch, 4 corrupt checkpoint, 1 anything else.

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use drift_core::cli::{
    cmd_bench, cmd_checkpoint_inspect, cmd_eval, cmd_schedule_preview, cmd_sweep, cmd_train,
    BenchArgs, EvalArgs, SchedulePreviewArgs, SweepArgs, SweepAxis, TrainArgs,
};
use drift_core::diffusion::BlockMode;
use drift_core::schedule::DecayKind;

#[derive(Parser)]
#[command(name = "drift", version, about = "Dynamic-rank diffusion-policy training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Plain,
    Factored,
    Lora,
}

impl From<ModeArg> for BlockMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Plain => BlockMode::Plain,
            ModeArg::Factored => BlockMode::Factored,
            ModeArg::Lora => BlockMode::Lora,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DecayArg {
    Linear,
    Cosine,
    Sigmoid,
    Exponential,
}

impl From<DecayArg> for DecayKind {
    fn from(k: DecayArg) -> Self {
        match k {
            DecayArg::Linear => DecayKind::Linear,
            DecayArg::Cosine => DecayKind::Cosine,
            DecayArg::Sigmoid => DecayKind::Sigmoid,
            DecayArg::Exponential => DecayKind::Exponential,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    DecayFn,
    RMin,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy from a JSON run config.
    Train {
        /// Path to the run config (JSON).
        config: PathBuf,
        /// Override the config's output directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Override the master seed (also settable via DRIFT_SEED).
        #[arg(long)]
        seed: Option<u64>,
        /// Resume from a checkpoint written by an earlier run of the same config.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this online iteration, leaving ckpt_interrupt.drft behind.
        #[arg(long)]
        stop_after_iter: Option<u32>,
    },
    /// Evaluate a checkpointed policy; prints JSON metrics to stdout.
    Eval {
        checkpoint: PathBuf,
        /// Number of evaluation episodes (ignored when --seeds is given).
        #[arg(long, default_value_t = 50)]
        n: usize,
        /// Seed for deriving episode seeds.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Explicit comma-separated episode seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Time forward/backward passes across rank settings; prints CSV.
    Bench {
        #[arg(long, value_enum, default_value_t = ModeArg::Factored)]
        mode: ModeArg,
        /// Per-layer rank divisors; each layer runs at max(1, full_rank / d).
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 4, 8])]
        divisors: Vec<usize>,
        #[arg(long, default_value_t = 32)]
        batch: usize,
        /// Timed batches per row (after 5 warmup batches).
        #[arg(long, default_value_t = 50)]
        iters: usize,
    },
    /// Run a grid of training sessions over one axis and aggregate CSVs.
    Sweep {
        config: PathBuf,
        #[arg(long, value_enum)]
        axis: AxisArg,
        /// Axis values; defaults to the full grid for the axis.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<String>>,
        /// Number of seeds per cell (seed, seed+1, ...).
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Print the epoch -> rank table for a decay schedule as CSV.
    SchedulePreview {
        #[arg(long, value_enum)]
        kind: DecayArg,
        #[arg(long, default_value_t = 96)]
        r_max: u32,
        #[arg(long, default_value_t = 8)]
        r_min: u32,
        #[arg(long, default_value_t = 30)]
        epochs: u32,
        #[arg(long, default_value_t = 0.5)]
        tau: f64,
        #[arg(long)]
        midpoint: Option<u32>,
    },
    /// Print a checkpoint's metadata and array manifest.
    CheckpointInspect { checkpoint: PathBuf },
}

fn run(cli: Cli) -> drift_core::Result<()> {
    match cli.command {
        Command::Train {
            config,
            out_dir,
            seed,
            resume,
            stop_after_iter,
        } => cmd_train(&TrainArgs {
            config,
            out_dir,
            seed,
            resume,
            stop_after_iter,
        }),
        Command::Eval {
            checkpoint,
            n,
            seed,
            seeds,
        } => cmd_eval(&EvalArgs {
            checkpoint,
            n,
            seed,
            seeds,
        }),
        Command::Bench {
            mode,
            divisors,
            batch,
            iters,
        } => cmd_bench(&BenchArgs {
            mode: mode.into(),
            divisors,
            batch,
            iters,
        }),
        Command::Sweep {
            config,
            axis,
            values,
            seeds,
            out_dir,
        } => cmd_sweep(&SweepArgs {
            config,
            axis: match axis {
                AxisArg::DecayFn => SweepAxis::DecayFn,
                AxisArg::RMin => SweepAxis::RMin,
            },
            values,
            seeds,
            out_dir,
        }),
        Command::SchedulePreview {
            kind,
            r_max,
            r_min,
            epochs,
            tau,
            midpoint,
        } => cmd_schedule_preview(&SchedulePreviewArgs {
            kind: kind.into(),
            r_max,
            r_min,
            epochs,
            tau,
            midpoint,
        }),
        Command::CheckpointInspect { checkpoint } => cmd_checkpoint_inspect(&checkpoint),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(drift_core::cli::exit_code(&e));
    }
}
