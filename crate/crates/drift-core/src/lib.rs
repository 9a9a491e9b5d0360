//! Dynamic-rank training for 1-D convolutional diffusion policies.
//!
//! The crate is organized around the training pipeline:
//!
//! - [`numerics`]: dense arrays, a reverse-mode tape, SVD/QR kernels, Adam.
//! - [`lowrank`]: SVD-partitioned (rank-modulated) and LoRA conv layers.
//! - [`schedule`]: decay functions mapping epoch index to a trainable-rank budget.
//! - [`diffusion`]: DDPM noise schedule and the conditional 1-D conv U-Net policy.
//! - [`harness`]: toy environments, scripted experts, expert gating, and the
//!   BC / HG-DAgger / DRIFT-DAgger training drivers.
//! - [`cli`]: run configs, binary checkpoints, benchmarking, and sweeps behind
//!   the `drift` binary.

pub mod cli;
pub mod diffusion;
pub mod harness;
pub mod lowrank;
pub mod numerics;
pub mod schedule;

pub use numerics::error::DriftError;

pub type Result<T> = std::result::Result<T, DriftError>;
