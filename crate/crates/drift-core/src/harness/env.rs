//! Toy environments and the scripted expert controller.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DT: f64 = 0.2;
pub const V_MAX: f64 = 1.5;
pub const REACH_EPS: f64 = 0.05;
pub const EXPERT_GAIN: f64 = 1.0;

pub struct StepOut {
    pub obs: Vec<f64>,
    pub done: bool,
    pub success: bool,
}

/// Episodic environment, deterministic given the reset seed and the action
/// sequence. `success` implies `done`.
pub trait Environment {
    fn obs_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn max_steps(&self) -> usize;
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> StepOut;
}

/// Two-phase point-mass reaching task on [-1, 1]^2.
///
/// Two waypoints are sampled per episode; the agent must visit them in order,
/// each within `REACH_EPS`. Observation: (position, active waypoint, phase
/// one-hot), 6 dims. Action: velocity, norm-clipped to `V_MAX`, integrated
/// with `DT`.
#[derive(Clone, Debug)]
pub struct PointReach2D {
    pos: [f64; 2],
    waypoints: [[f64; 2]; 2],
    phase: usize,
    steps: usize,
    done: bool,
    max_steps: usize,
}

impl PointReach2D {
    pub fn new() -> Self {
        PointReach2D {
            pos: [0.0; 2],
            waypoints: [[0.0; 2]; 2],
            phase: 0,
            steps: 0,
            done: true,
            max_steps: 100,
        }
    }

    fn observe(&self) -> Vec<f64> {
        let wp = self.waypoints[self.phase.min(1)];
        vec![
            self.pos[0],
            self.pos[1],
            wp[0],
            wp[1],
            if self.phase == 0 { 1.0 } else { 0.0 },
            if self.phase == 0 { 0.0 } else { 1.0 },
        ]
    }
}

impl Default for PointReach2D {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for PointReach2D {
    fn obs_dim(&self) -> usize {
        6
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn max_steps(&self) -> usize {
        self.max_steps
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draw = |rng: &mut ChaCha8Rng| [rng.gen_range(-0.9..0.9), rng.gen_range(-0.9..0.9)];
        self.pos = draw(&mut rng);
        // Keep waypoints apart from the start and from each other so episodes
        // have non-trivial length.
        loop {
            self.waypoints[0] = draw(&mut rng);
            if dist(&self.waypoints[0], &self.pos) >= 0.3 {
                break;
            }
        }
        loop {
            self.waypoints[1] = draw(&mut rng);
            if dist(&self.waypoints[1], &self.waypoints[0]) >= 0.3 {
                break;
            }
        }
        self.phase = 0;
        self.steps = 0;
        self.done = false;
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> StepOut {
        assert!(!self.done, "step after episode end");
        let a = clip_norm(action, V_MAX);
        for d in 0..2 {
            self.pos[d] = (self.pos[d] + DT * a[d]).clamp(-1.0, 1.0);
        }
        self.steps += 1;
        let mut success = false;
        if dist(&self.pos, &self.waypoints[self.phase.min(1)]) <= REACH_EPS {
            self.phase += 1;
            if self.phase == 2 {
                success = true;
                self.done = true;
            }
        }
        if self.steps >= self.max_steps {
            self.done = true;
        }
        StepOut {
            obs: self.observe(),
            done: self.done,
            success,
        }
    }
}

/// Proportional controller toward the active waypoint, gain `EXPERT_GAIN`,
/// norm-clipped like any other action.
pub fn scripted_expert(obs: &[f64]) -> Vec<f64> {
    let a = [
        EXPERT_GAIN * (obs[2] - obs[0]),
        EXPERT_GAIN * (obs[3] - obs[1]),
    ];
    clip_norm(&a, V_MAX)
}

fn dist(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn clip_norm(a: &[f64], max_norm: f64) -> Vec<f64> {
    let n = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > max_norm {
        a.iter().map(|v| v * max_norm / n).collect()
    } else {
        a.to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_given_seed_and_actions() {
        let mut e1 = PointReach2D::new();
        let mut e2 = PointReach2D::new();
        let o1 = e1.reset(42);
        let o2 = e2.reset(42);
        assert_eq!(o1, o2);
        let a = [0.4, -0.2];
        for _ in 0..5 {
            let s1 = e1.step(&a);
            let s2 = e2.step(&a);
            assert_eq!(s1.obs, s2.obs);
            assert_eq!(s1.done, s2.done);
        }
    }

    #[test]
    fn expert_at_waypoint_is_near_zero() {
        let obs = [0.3, -0.2, 0.3, -0.2, 1.0, 0.0];
        let a = scripted_expert(&obs);
        assert!(a.iter().map(|v| v * v).sum::<f64>().sqrt() <= 1e-6);
    }

    #[test]
    fn expert_points_at_waypoint() {
        let obs = [0.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let a = scripted_expert(&obs);
        assert!(a[0] > 0.0);
        assert!(a[1].abs() < 1e-12);
    }

    #[test]
    fn expert_rollouts_succeed() {
        // Rollout oracle: the scripted controller should solve essentially
        // every episode within the step limit.
        let mut env = PointReach2D::new();
        let mut successes = 0;
        for seed in 0..100u64 {
            let mut obs = env.reset(seed);
            loop {
                let a = scripted_expert(&obs);
                let out = env.step(&a);
                obs = out.obs;
                if out.done {
                    if out.success {
                        successes += 1;
                    }
                    break;
                }
            }
        }
        assert!(successes >= 99, "expert solved only {successes}/100");
    }

    #[test]
    fn success_implies_done() {
        let mut env = PointReach2D::new();
        let mut obs = env.reset(7);
        loop {
            let out = env.step(&scripted_expert(&obs));
            if out.success {
                assert!(out.done);
            }
            if out.done {
                break;
            }
            obs = out.obs;
        }
    }
}
