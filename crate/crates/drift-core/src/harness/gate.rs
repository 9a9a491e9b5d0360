//! Expert intervention gate based on learner/expert action agreement.

use serde::{Deserialize, Serialize};

use crate::harness::Dataset;
use crate::DriftError;
use crate::Result;

/// Cosine similarity with a degenerate-vector convention: if either vector is
/// (numerically) zero the directions are treated as agreeing, returning 1.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na < 1e-9 || nb < 1e-9 {
        return 1.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Intervene when the learner's proposed action disagrees with the expert's:
/// cosine similarity strictly below the threshold.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ExpertGate {
    pub threshold: f64,
}

impl ExpertGate {
    pub fn new(threshold: f64) -> Self {
        ExpertGate { threshold }
    }

    pub fn intervene(&self, learner_action: &[f64], expert_action: &[f64]) -> bool {
        cosine_sim(learner_action, expert_action) < self.threshold
    }
}

/// Mean cosine similarity between consecutive expert actions across all
/// trajectories: the auto-derived gate threshold.
pub fn compute_gate_threshold(expert_data: &Dataset) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0u64;
    for traj in &expert_data.trajectories {
        for w in traj.steps.windows(2) {
            if w[0].expert_label && w[1].expert_label {
                sum += cosine_sim(&w[0].action, &w[1].action);
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(DriftError::Contract(
            "gate threshold needs at least one consecutive expert action pair".into(),
        ));
    }
    Ok(sum / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{Step, Trajectory};

    fn ds_from_actions(actions: &[Vec<f64>]) -> Dataset {
        let mut ds = Dataset::new();
        ds.push(Trajectory {
            steps: actions
                .iter()
                .map(|a| Step {
                    obs: vec![0.0],
                    action: a.clone(),
                    expert_label: true,
                })
                .collect(),
            success: true,
        });
        ds
    }

    #[test]
    fn constant_actions_give_threshold_one() {
        let ds = ds_from_actions(&vec![vec![0.5, 0.5]; 4]);
        assert!((compute_gate_threshold(&ds).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn alternating_actions_give_minus_one() {
        let ds = ds_from_actions(&[
            vec![1.0, 0.0],
            vec![-1.0, 0.0],
            vec![1.0, 0.0],
            vec![-1.0, 0.0],
        ]);
        assert!((compute_gate_threshold(&ds).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_dataset_is_a_contract_error() {
        assert!(compute_gate_threshold(&Dataset::new()).is_err());
        // single-step trajectories have no pairs either
        let ds = ds_from_actions(&[vec![1.0, 0.0]]);
        assert!(compute_gate_threshold(&ds).is_err());
    }

    #[test]
    fn gate_triggers_strictly_below_threshold() {
        let g = ExpertGate::new(0.0);
        assert!(g.intervene(&[1.0, 0.0], &[-1.0, 0.0]));
        assert!(!g.intervene(&[1.0, 0.0], &[0.0, 1.0])); // cos = 0, not < 0
        assert!(!g.intervene(&[1.0, 0.0], &[1.0, 0.1]));
        // zero learner action counts as agreement
        assert!(!ExpertGate::new(1.0).intervene(&[0.0, 0.0], &[1.0, 0.0]));
    }
}
