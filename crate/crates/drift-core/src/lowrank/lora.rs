//! LoRA-style low-rank conv adapter: frozen base kernel plus an
//! alpha-scaled down/up projection pair.

use rand::Rng;
use rand_distr::Normal;

use crate::lowrank::ConvGeometry;
use crate::numerics::{Array, NodeId, ParamRef, Parameter, Tape};
use crate::Result;

/// Base conv weight with a rank-r adapter path.
///
/// `w_down` is `(r, C_in, k)`, `w_up` acts as a `(C_out, r)` channel mixer
/// (a 1x1 conv over the down-projected features). With `w_up == 0` or
/// `alpha == 0` the layer computes exactly the base convolution.
pub struct LoraConv {
    pub w_conv: ParamRef,
    pub w_down: ParamRef,
    pub w_up: ParamRef,
    pub alpha: f64,
    pub r: usize,
    pub geom: ConvGeometry,
    name: String,
}

impl LoraConv {
    /// Wrap an existing base kernel; the base is frozen and a fresh adapter is
    /// injected (`w_down ~ N(0, 1/(C_in k))`, `w_up = 0`).
    pub fn adapt<R: Rng>(
        w_conv: Array,
        geom: ConvGeometry,
        r: usize,
        alpha: f64,
        name: &str,
        rng: &mut R,
    ) -> Self {
        let r = r.clamp(1, geom.layer_r_max());
        let std = (1.0 / (geom.c_in * geom.k) as f64).sqrt();
        let dist = Normal::new(0.0, std).unwrap();
        let numel = r * geom.c_in * geom.k;
        let down: Vec<f64> = (0..numel).map(|_| rng.sample(dist)).collect();
        LoraConv {
            w_conv: Parameter::new(format!("{name}.w_conv"), w_conv, false),
            w_down: Parameter::new(
                format!("{name}.w_down"),
                Array::new(vec![r, geom.c_in, geom.k], down).unwrap(),
                true,
            ),
            w_up: Parameter::new(
                format!("{name}.w_up"),
                Array::zeros(&[geom.c_out, r]),
                true,
            ),
            alpha,
            r,
            geom,
            name: name.to_string(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Base conv plus the alpha-scaled adapter path (down conv, then 1x1 up mix).
    pub fn forward(
        &self,
        tape: &mut Tape,
        x: NodeId,
        bias: Option<NodeId>,
    ) -> Result<NodeId> {
        let wc = tape.param(&self.w_conv);
        let base = tape.conv1d(x, wc, bias, self.geom.stride, self.geom.padding)?;
        let wd = tape.param(&self.w_down);
        let down = tape.conv1d(x, wd, None, self.geom.stride, self.geom.padding)?;
        let wu = tape.param(&self.w_up);
        let wu3 = tape.reshape(wu, &[self.geom.c_out, self.r, 1])?;
        let up = tape.conv1d(down, wu3, None, 1, 0)?;
        let scaled = tape.scale(up, self.alpha);
        tape.add(base, scaled)
    }

    /// Compose the adapter into a full kernel: `w_conv + alpha * (w_up o w_down)`.
    pub fn merge(&self) -> Array {
        let g = &self.geom;
        let base = self.w_conv.borrow().value.clone();
        let down = self.w_down.borrow().value.clone();
        let up = self.w_up.borrow().value.clone();
        let mut out = base;
        for o in 0..g.c_out {
            for i in 0..g.c_in {
                for kk in 0..g.k {
                    let mut acc = 0.0;
                    for rho in 0..self.r {
                        acc += up.at2(o, rho) * down.data()[(rho * g.c_in + i) * g.k + kk];
                    }
                    out.data_mut()[(o * g.c_in + i) * g.k + kk] += self.alpha * acc;
                }
            }
        }
        out
    }

    /// Merge the current adapter into the base and inject a fresh one at rank
    /// `r_new` (`w_up = 0`, so the forward map is unchanged).
    pub fn merge_and_reinject<R: Rng>(&mut self, r_new: usize, rng: &mut R) {
        let merged = self.merge();
        *self = LoraConv::adapt(merged, self.geom, r_new, self.alpha, &self.name, rng);
    }

    /// Trainable scalar count: r * (C_in * k + C_out).
    pub fn trainable_param_count(&self) -> usize {
        self.r * (self.geom.c_in * self.geom.k + self.geom.c_out)
    }

    pub fn trainable_params(&self) -> Vec<ParamRef> {
        vec![self.w_down.clone(), self.w_up.clone()]
    }

    pub fn all_params(&self) -> Vec<ParamRef> {
        vec![self.w_conv.clone(), self.w_down.clone(), self.w_up.clone()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn forward_with_weight(w: &Array, x: &Array, stride: usize, padding: usize) -> Array {
        let mut tape = Tape::new();
        let xn = tape.constant(x.clone());
        let wn = tape.constant(w.clone());
        let out = tape.conv1d(xn, wn, None, stride, padding).unwrap();
        tape.value(out).clone()
    }

    fn lora_out(l: &LoraConv, x: &Array) -> Array {
        let mut tape = Tape::new();
        let xn = tape.constant(x.clone());
        let out = l.forward(&mut tape, xn, None).unwrap();
        tape.value(out).clone()
    }

    #[test]
    fn zero_up_equals_base() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let geom = ConvGeometry::new(4, 3, 3, 1, 1);
        let w = Array::randn(&[4, 3, 3], &mut rng);
        let l = LoraConv::adapt(w.clone(), geom, 2, 1.0, "t", &mut rng);
        let x = Array::randn(&[2, 3, 8], &mut rng);
        let base = forward_with_weight(&w, &x, 1, 1);
        let out = lora_out(&l, &x);
        assert!(out.rel_frobenius_dist(&base) < 1e-12);
    }

    #[test]
    fn zero_alpha_equals_base() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let geom = ConvGeometry::new(4, 3, 3, 1, 1);
        let w = Array::randn(&[4, 3, 3], &mut rng);
        let l = LoraConv::adapt(w.clone(), geom, 2, 0.0, "t", &mut rng);
        // give the adapter a nonzero up projection
        l.w_up.borrow_mut().value = Array::randn(&[4, 2], &mut rng);
        let x = Array::randn(&[2, 3, 8], &mut rng);
        let base = forward_with_weight(&w, &x, 1, 1);
        assert!(lora_out(&l, &x).rel_frobenius_dist(&base) < 1e-12);
    }

    #[test]
    fn merged_weight_matches_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let geom = ConvGeometry::new(5, 3, 3, 1, 1);
        let w = Array::randn(&[5, 3, 3], &mut rng);
        let l = LoraConv::adapt(w, geom, 2, 1.0, "t", &mut rng);
        l.w_up.borrow_mut().value = Array::randn(&[5, 2], &mut rng);
        let x = Array::randn(&[2, 3, 8], &mut rng);
        let via_merge = forward_with_weight(&l.merge(), &x, 1, 1);
        assert!(lora_out(&l, &x).rel_frobenius_dist(&via_merge) < 1e-6);
    }

    #[test]
    fn merge_and_reinject_preserves_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let geom = ConvGeometry::new(5, 3, 3, 1, 1);
        let w = Array::randn(&[5, 3, 3], &mut rng);
        let mut l = LoraConv::adapt(w, geom, 3, 1.0, "t", &mut rng);
        l.w_up.borrow_mut().value = Array::randn(&[5, 3], &mut rng);
        let x = Array::randn(&[2, 3, 8], &mut rng);
        let before = lora_out(&l, &x);
        l.merge_and_reinject(2, &mut rng);
        assert_eq!(l.r, 2);
        assert!(l.w_up.borrow().value.data().iter().all(|&v| v == 0.0));
        assert!(lora_out(&l, &x).rel_frobenius_dist(&before) < 1e-10);
    }

    #[test]
    fn strided_merge_matches_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let geom = ConvGeometry::new(4, 2, 3, 2, 1);
        let w = Array::randn(&[4, 2, 3], &mut rng);
        let l = LoraConv::adapt(w, geom, 2, 1.0, "t", &mut rng);
        l.w_up.borrow_mut().value = Array::randn(&[4, 2], &mut rng);
        let x = Array::randn(&[1, 2, 8], &mut rng);
        let via_merge = forward_with_weight(&l.merge(), &x, 2, 1);
        assert!(lora_out(&l, &x).rel_frobenius_dist(&via_merge) < 1e-10);
    }
}
