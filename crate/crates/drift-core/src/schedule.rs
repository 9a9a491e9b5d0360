//! Trainable-rank schedules: decay functions mapping epoch index to the rank
//! budget, decreasing from `r_max` to `r_min` over `total_epochs`.
//!
//! Evaluation is careful about the floor: the linear kind and the exactly
//! rational cosine points use integer arithmetic, and the sigmoid/exponential
//! kinds floor their positive tail term directly instead of flooring a
//! cancellation-prone difference. This keeps results in exact agreement with
//! an extended-precision evaluation of the formulas.

use serde::{Deserialize, Serialize};

use crate::numerics::error::DriftError;
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayKind {
    Linear,
    Cosine,
    Sigmoid,
    Exponential,
    /// No decay: the budget stays at `r_max`.
    Constant,
}

/// Which span of training the decay runs over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleSpan {
    /// `total_epochs` counts offline epochs plus online iterations.
    #[default]
    Combined,
    /// `total_epochs` counts offline epochs only.
    Offline,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RankSchedule {
    pub kind: DecayKind,
    pub r_max: u32,
    pub r_min: u32,
    pub total_epochs: u32,
    /// Steepness; used by sigmoid and exponential kinds.
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Sigmoid midpoint; defaults to total_epochs / 2.
    #[serde(default)]
    pub midpoint: Option<u32>,
    #[serde(default)]
    pub span: ScheduleSpan,
}

fn default_tau() -> f64 {
    0.5
}

impl RankSchedule {
    pub fn new(kind: DecayKind, r_max: u32, r_min: u32, total_epochs: u32) -> Result<Self> {
        if r_min < 1 || r_min > r_max {
            return Err(DriftError::Config(format!(
                "rank schedule needs 1 <= r_min <= r_max, got r_min={}, r_max={}",
                r_min, r_max
            )));
        }
        if total_epochs == 0 {
            return Err(DriftError::Config("total_epochs must be positive".into()));
        }
        Ok(RankSchedule {
            kind,
            r_max,
            r_min,
            total_epochs,
            tau: default_tau(),
            midpoint: None,
            span: ScheduleSpan::default(),
        })
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn midpoint(&self) -> u32 {
        self.midpoint.unwrap_or(self.total_epochs / 2)
    }

    /// Rank budget at epoch `i`, clamped to `[r_min, r_max]`.
    pub fn rank_at(&self, i: u32) -> u32 {
        if self.kind == DecayKind::Constant {
            return self.r_max;
        }
        if i > self.total_epochs {
            return self.r_min;
        }
        let raw = self.floor_formula(i);
        raw.clamp(self.r_min as i64, self.r_max as i64) as u32
    }

    /// floor of the decay formula, before clamping.
    fn floor_formula(&self, i: u32) -> i64 {
        let r_max = self.r_max as i64;
        let r_min = self.r_min as i64;
        let d = r_max - r_min;
        let t = self.total_epochs as i64;
        let i_ = i as i64;
        match self.kind {
            DecayKind::Linear => {
                // floor(r_max - d * i / T), exactly, in integers.
                (r_max * t - d * i_).div_euclid(t)
            }
            DecayKind::Cosine => {
                // r_min + d/2 * (1 + cos(pi i / T)). Rational cosine points
                // (Niven): cos = 1, 1/2, 0, -1/2, -1.
                if i_ == 0 {
                    r_max
                } else if i_ == t {
                    r_min
                } else if 2 * i_ == t {
                    (2 * r_min + d).div_euclid(2)
                } else if 3 * i_ == t {
                    (4 * r_min + 3 * d).div_euclid(4)
                } else if 3 * i_ == 2 * t {
                    (4 * r_min + d).div_euclid(4)
                } else {
                    // 1 + cos(x) = 2 cos^2(x/2): positive term, no cancellation.
                    let half = std::f64::consts::PI * i as f64 / (2.0 * t as f64);
                    let term = d as f64 * half.cos().powi(2);
                    r_min + term.floor() as i64
                }
            }
            DecayKind::Sigmoid => {
                // r_max - eps with eps = d / (1 + e^{-tau (i - t_m)}) > 0.
                let tm = self.midpoint() as f64;
                let eps = d as f64 / (1.0 + (-self.tau * (i as f64 - tm)).exp());
                let fe = eps.floor();
                if eps == fe {
                    r_max - fe as i64
                } else {
                    r_max - fe as i64 - 1
                }
            }
            DecayKind::Exponential => {
                let term = d as f64 * (-self.tau * i as f64).exp();
                r_min + term.floor() as i64
            }
            DecayKind::Constant => r_max as i64,
        }
    }

    /// Full (epoch, rank) trajectory for epochs 0..=total_epochs.
    pub fn table(&self) -> Vec<(u32, u32)> {
        (0..=self.total_epochs).map(|i| (i, self.rank_at(i))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched(kind: DecayKind, tau: f64) -> RankSchedule {
        RankSchedule::new(kind, 2048, 256, 150).unwrap().with_tau(tau)
    }

    #[test]
    fn linear_endpoints() {
        let s = sched(DecayKind::Linear, 0.5);
        assert_eq!(s.rank_at(0), 2048);
        assert_eq!(s.rank_at(150), 256);
    }

    #[test]
    fn cosine_midpoint() {
        let s = sched(DecayKind::Cosine, 0.5);
        assert_eq!(s.rank_at(75), 1152);
    }

    #[test]
    fn sigmoid_midpoint_symmetry() {
        let s = sched(DecayKind::Sigmoid, 0.5);
        assert_eq!(s.rank_at(75), 1152);
    }

    #[test]
    fn exponential_endpoints() {
        let s = sched(DecayKind::Exponential, 0.1);
        assert_eq!(s.rank_at(0), 2048);
        assert_eq!(s.rank_at(150), 256);
    }

    #[test]
    fn constant_kind() {
        let s = sched(DecayKind::Constant, 0.5);
        assert!(s.table().iter().all(|&(_, r)| r == 2048));
    }

    #[test]
    fn past_end_returns_r_min() {
        let s = sched(DecayKind::Linear, 0.5);
        assert_eq!(s.rank_at(151), 256);
        assert_eq!(s.rank_at(10_000), 256);
    }

    #[test]
    fn tables_monotone_and_bounded() {
        for (kind, tau) in [
            (DecayKind::Linear, 0.5),
            (DecayKind::Cosine, 0.5),
            (DecayKind::Sigmoid, 0.1),
            (DecayKind::Sigmoid, 0.5),
            (DecayKind::Exponential, 0.1),
            (DecayKind::Exponential, 0.5),
        ] {
            let s = sched(kind, tau);
            let table = s.table();
            for w in table.windows(2) {
                assert!(w[1].1 <= w[0].1, "{:?} increased at epoch {}", kind, w[1].0);
            }
            for &(_, r) in &table {
                assert!((256..=2048).contains(&r));
            }
        }
    }

    #[test]
    fn linear_table_differences() {
        let s = sched(DecayKind::Linear, 0.5);
        let table = s.table();
        // Arithmetic progression then floor: successive differences in {-d, -d-1}
        // for d = floor((r_max - r_min)/T).
        let d = (2048 - 256) / 150;
        for w in table.windows(2) {
            let diff = w[0].1 as i64 - w[1].1 as i64;
            assert!(diff == d || diff == d + 1, "diff {}", diff);
        }
    }
}
