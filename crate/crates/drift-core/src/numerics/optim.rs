//! Adam optimizer with per-parameter first/second moments.

use std::collections::BTreeMap;

use crate::numerics::array::{Array, ParamRef};

struct Moments {
    m: Array,
    v: Array,
    t: u64,
}

/// Adam with the usual bias-corrected moment updates. Moments are keyed by
/// parameter name and re-initialized automatically when a parameter changes
/// shape (which happens when a layer is re-partitioned at a new rank).
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    state: BTreeMap<String, Moments>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            state: BTreeMap::new(),
        }
    }

    /// Apply one update to every trainable parameter; frozen parameters are
    /// never touched (not even their moments).
    pub fn step(&mut self, params: &[ParamRef]) {
        for p in params {
            let mut p = p.borrow_mut();
            if !p.requires_grad {
                continue;
            }
            let name = p.name.clone();
            let shape = p.value.shape().to_vec();
            let entry = self.state.entry(name).or_insert_with(|| Moments {
                m: Array::zeros(&shape),
                v: Array::zeros(&shape),
                t: 0,
            });
            if entry.m.shape() != shape.as_slice() {
                *entry = Moments {
                    m: Array::zeros(&shape),
                    v: Array::zeros(&shape),
                    t: 0,
                };
            }
            entry.t += 1;
            let t = entry.t as i32;
            let bc1 = 1.0 - self.beta1.powi(t);
            let bc2 = 1.0 - self.beta2.powi(t);
            let grad = p.grad.data().to_vec();
            for i in 0..grad.len() {
                let g = grad[i];
                let m = self.beta1 * entry.m.data()[i] + (1.0 - self.beta1) * g;
                let v = self.beta2 * entry.v.data()[i] + (1.0 - self.beta2) * g * g;
                entry.m.data_mut()[i] = m;
                entry.v.data_mut()[i] = v;
                let m_hat = m / bc1;
                let v_hat = v / bc2;
                p.value.data_mut()[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }

    pub fn zero_grad(&self, params: &[ParamRef]) {
        for p in params {
            p.borrow_mut().zero_grad();
        }
    }

    /// Export moment state for checkpointing: (name, m, v, t) sorted by name.
    pub fn export_state(&self) -> Vec<(String, Array, Array, u64)> {
        self.state
            .iter()
            .map(|(k, s)| (k.clone(), s.m.clone(), s.v.clone(), s.t))
            .collect()
    }

    pub fn import_state(&mut self, entries: Vec<(String, Array, Array, u64)>) {
        self.state.clear();
        for (name, m, v, t) in entries {
            self.state.insert(name, Moments { m, v, t });
        }
    }
}
