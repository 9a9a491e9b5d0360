//! Trajectory storage and windowed minibatch assembly.

use serde::{Deserialize, Serialize};

use crate::diffusion::ActionNormalizer;
use crate::numerics::Array;

/// One environment transition. `action` is the action to imitate when
/// `expert_label` is set (the expert's), otherwise the executed learner
/// action kept only for bookkeeping.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Step {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub expert_label: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    pub success: bool,
}

impl Trajectory {
    /// Maximal runs of consecutive expert-labeled steps, as (start, end)
    /// inclusive index pairs.
    pub fn labeled_segments(&self) -> Vec<(usize, usize)> {
        let mut segs = Vec::new();
        let mut start: Option<usize> = None;
        for (i, s) in self.steps.iter().enumerate() {
            match (s.expert_label, start) {
                (true, None) => start = Some(i),
                (false, Some(s0)) => {
                    segs.push((s0, i - 1));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s0) = start {
            segs.push((s0, self.steps.len() - 1));
        }
        segs
    }

    pub fn label_count(&self) -> usize {
        self.steps.iter().filter(|s| s.expert_label).count()
    }
}

/// Training window anchor: trajectory index, anchor step, and the end of the
/// labeled segment the anchor lives in (for forward padding).
#[derive(Clone, Copy, Debug)]
pub struct Anchor {
    pub traj: usize,
    pub t: usize,
    pub seg_end: usize,
}

/// Append-only store of trajectories.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn new() -> Self {
        Dataset::default()
    }

    pub fn push(&mut self, t: Trajectory) {
        self.trajectories.push(t);
    }

    pub fn extend(&mut self, other: Dataset) {
        self.trajectories.extend(other.trajectories);
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Total expert-labeled pairs across all trajectories.
    pub fn label_count(&self) -> usize {
        self.trajectories.iter().map(|t| t.label_count()).sum()
    }

    /// One anchor per expert-labeled step, in storage order.
    pub fn anchors(&self) -> Vec<Anchor> {
        let mut out = Vec::new();
        for (ti, traj) in self.trajectories.iter().enumerate() {
            for (s0, s1) in traj.labeled_segments() {
                for t in s0..=s1 {
                    out.push(Anchor {
                        traj: ti,
                        t,
                        seg_end: s1,
                    });
                }
            }
        }
        out
    }

    pub fn labeled_actions(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for traj in &self.trajectories {
            for s in &traj.steps {
                if s.expert_label {
                    out.push(s.action.clone());
                }
            }
        }
        out
    }

    /// Assemble a minibatch of observation windows and normalized action
    /// horizons. Observations pad backward to the trajectory start; actions
    /// pad forward by repeating the segment's last labeled action.
    pub fn batch(
        &self,
        anchors: &[Anchor],
        obs_horizon: usize,
        horizon: usize,
        norm: &ActionNormalizer,
    ) -> (Array, Array) {
        let b = anchors.len();
        let obs_dim = self.trajectories[anchors[0].traj].steps[0].obs.len();
        let action_dim = self.trajectories[anchors[0].traj].steps[0].action.len();
        let mut obs = Array::zeros(&[b, obs_horizon * obs_dim]);
        let mut act = Array::zeros(&[b, action_dim, horizon]);
        for (bi, a) in anchors.iter().enumerate() {
            let steps = &self.trajectories[a.traj].steps;
            for h in 0..obs_horizon {
                let idx = (a.t + h + 1).saturating_sub(obs_horizon).min(a.t);
                for d in 0..obs_dim {
                    obs.data_mut()[bi * obs_horizon * obs_dim + h * obs_dim + d] =
                        steps[idx].obs[d];
                }
            }
            for j in 0..horizon {
                let idx = (a.t + j).min(a.seg_end);
                for d in 0..action_dim {
                    act.data_mut()[(bi * action_dim + d) * horizon + j] = steps[idx].action[d];
                }
            }
        }
        // Normalize actions per dimension into [-1, 1].
        for bi in 0..b {
            for d in 0..action_dim {
                let span = norm.hi[d] - norm.lo[d];
                for j in 0..horizon {
                    let i = (bi * action_dim + d) * horizon + j;
                    let v = act.data()[i];
                    act.data_mut()[i] = 2.0 * (v - norm.lo[d]) / span - 1.0;
                }
            }
        }
        (obs, act)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(labels: &[bool]) -> Trajectory {
        Trajectory {
            steps: labels
                .iter()
                .enumerate()
                .map(|(i, &l)| Step {
                    obs: vec![i as f64; 3],
                    action: vec![i as f64, -(i as f64)],
                    expert_label: l,
                })
                .collect(),
            success: true,
        }
    }

    #[test]
    fn segments_split_on_unlabeled_steps() {
        let t = traj(&[true, true, false, true, false, false, true]);
        assert_eq!(t.labeled_segments(), vec![(0, 1), (3, 3), (6, 6)]);
        assert_eq!(t.label_count(), 4);
    }

    #[test]
    fn anchors_count_equals_label_count() {
        let mut ds = Dataset::new();
        ds.push(traj(&[true, true, true, false, true]));
        ds.push(traj(&[false, false]));
        assert_eq!(ds.anchors().len(), ds.label_count());
        assert_eq!(ds.label_count(), 4);
    }

    #[test]
    fn batch_pads_both_directions() {
        let mut ds = Dataset::new();
        ds.push(traj(&[true, true, true]));
        let norm = ActionNormalizer::identity(2);
        let anchors = ds.anchors();
        let (obs, act) = ds.batch(&anchors[..1], 2, 4, &norm);
        // anchor t=0: obs window pads backward with step 0
        assert_eq!(obs.shape(), &[1, 6]);
        assert_eq!(&obs.data()[0..3], &[0.0, 0.0, 0.0]);
        assert_eq!(&obs.data()[3..6], &[0.0, 0.0, 0.0]);
        // action horizon pads forward with the segment's last action (2, -2)
        assert_eq!(act.shape(), &[1, 2, 4]);
        assert_eq!(act.data()[3], 2.0); // dim 0, j=3
        assert_eq!(act.data()[7], -2.0); // dim 1, j=3
        let (obs2, _) = ds.batch(&anchors[2..3], 2, 4, &norm);
        // anchor t=2: obs window is steps 1 and 2
        assert_eq!(&obs2.data()[0..3], &[1.0, 1.0, 1.0]);
        assert_eq!(&obs2.data()[3..6], &[2.0, 2.0, 2.0]);
    }
}
