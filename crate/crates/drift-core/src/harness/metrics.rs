//! Session metric aggregation.

use serde::{Deserialize, Serialize};

use crate::diffusion::BlockMode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Offline,
    Online,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Offline => "offline",
            Phase::Online => "online",
        }
    }
}

/// One training epoch's log row.
#[derive(Clone, Debug)]
pub struct EpochLog {
    pub phase: Phase,
    /// Global epoch index (offline epochs, then online iterations).
    pub epoch: u32,
    /// Requested trainable rank (0 for plain-mode training).
    pub rank: usize,
    pub mode: BlockMode,
    pub n_batches: usize,
    pub train_time_s: f64,
    pub loss: f64,
    /// Cumulative expert labels at the end of this epoch.
    pub nel: u64,
}

/// One evaluation checkpoint's log row.
#[derive(Clone, Debug)]
pub struct EvalLog {
    /// Online iteration count at evaluation time (0 = end of offline phase).
    pub iteration: u32,
    pub sr: f64,
    pub msd_mean: f64,
    pub msd_std: f64,
    pub nel: u64,
}

/// Rollout evaluation summary: success rate and task duration stats in steps.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Metrics {
    pub sr: f64,
    pub msd_mean: f64,
    pub msd_std: f64,
    pub n: usize,
}

impl Metrics {
    pub fn from_episodes(results: &[(bool, usize)]) -> Metrics {
        let n = results.len();
        let sr = results.iter().filter(|(s, _)| *s).count() as f64 / n.max(1) as f64;
        let durations: Vec<f64> = results.iter().map(|(_, d)| *d as f64).collect();
        let mean = durations.iter().sum::<f64>() / n.max(1) as f64;
        let var = durations.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n.max(1) as f64;
        Metrics {
            sr,
            msd_mean: mean,
            msd_std: var.sqrt(),
            n,
        }
    }
}

/// Aggregate over a session's epoch logs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Total expert-labeled pairs.
    pub nel: u64,
    /// Mean wall-clock seconds per batch, offline phase.
    pub mbt_offline: f64,
    /// Mean seconds per batch, online phase; absent when no online epochs ran.
    pub mbt_online: Option<f64>,
    /// Label-count-weighted mean of the phase MBTs.
    pub mbt_all: f64,
    /// Cumulative active training time (excludes env stepping and eval).
    pub ct_s: f64,
}

pub fn metrics_aggregate(logs: &[EpochLog]) -> MetricsReport {
    let phase_stats = |p: Phase| {
        let (mut time, mut batches, mut nel_max) = (0.0, 0usize, 0u64);
        for l in logs.iter().filter(|l| l.phase == p) {
            time += l.train_time_s;
            batches += l.n_batches;
            nel_max = nel_max.max(l.nel);
        }
        (time, batches, nel_max)
    };
    let (off_time, off_batches, off_nel) = phase_stats(Phase::Offline);
    let (on_time, on_batches, total_nel_online) = phase_stats(Phase::Online);
    let nel = logs.last().map_or(0, |l| l.nel).max(off_nel);
    let mbt_offline = off_time / off_batches.max(1) as f64;
    let has_online = logs.iter().any(|l| l.phase == Phase::Online);
    let mbt_online = if has_online {
        Some(on_time / on_batches.max(1) as f64)
    } else {
        None
    };
    // Labels attributed per phase: offline labels are the count at the end of
    // the offline stage; online labels are the increment after it.
    let online_labels = total_nel_online.saturating_sub(off_nel);
    let mbt_all = match mbt_online {
        Some(mo) => {
            let (wo, wn) = (off_nel as f64, online_labels as f64);
            (wo * mbt_offline + wn * mo) / (wo + wn).max(1.0)
        }
        None => mbt_offline,
    };
    MetricsReport {
        nel,
        mbt_offline,
        mbt_online,
        mbt_all,
        ct_s: off_time + on_time,
    }
}
