//! Run configuration, binary checkpoints, and the subcommand implementations
//! behind the `drift` binary.

mod checkpoint;
mod commands;
mod config;

pub use checkpoint::{
    checkpoint_from_session, load_checkpoint, save_checkpoint, session_from_checkpoint,
    Checkpoint, CheckpointMeta, Dtype, NamedArray, TrajMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use commands::{
    apply_seed_override, cmd_bench, cmd_checkpoint_inspect, cmd_eval, cmd_schedule_preview,
    cmd_sweep, cmd_train, exit_code, median_iqr, time_batches, write_checkpoints_csv,
    write_metrics_csv, BenchArgs, EvalArgs, SchedulePreviewArgs, SweepArgs, SweepAxis, TrainArgs,
};
pub use config::{EnvConfig, EnvKind, RunConfig};
