//! SVD-partitioned weight: trainable top-r singular subspace plus frozen complement.

use crate::lowrank::ConvGeometry;
use crate::numerics::{svd, Array, NodeId, ParamRef, Parameter, Tape};
use crate::numerics::linalg::qr_orthonormalize;
use crate::Result;

/// U/S/V factors of an (m, n) weight, split at rank `r`.
///
/// The trainable factors carry gradients; the frozen complement never does.
/// The effective weight is always `u_t diag(s_t) v_t^T + u_f diag(s_f) v_f^T`;
/// the frozen product is cached since it only changes on (re)partition.
pub struct FactoredMatrix {
    pub u_train: ParamRef,
    pub s_train: ParamRef,
    pub v_train: ParamRef,
    pub u_frozen: ParamRef,
    pub s_frozen: ParamRef,
    pub v_frozen: ParamRef,
    pub r: usize,
    pub m: usize,
    pub n: usize,
    /// m x n product of the frozen factors.
    frozen_product: Array,
    name: String,
}

/// Partition `w` at rank `r` into trainable and frozen SVD factors.
/// An out-of-range `r` is clamped to `[1, min(m, n)]`.
pub fn svd_partition(w: &Array, r: usize, name: &str) -> Result<FactoredMatrix> {
    let (m, n) = (w.rows(), w.cols());
    let p = m.min(n);
    let r_eff = r.clamp(1, p);
    if r_eff != r {
        eprintln!(
            "warning: rank {} out of range for {}x{} layer {:?}; clamped to {}",
            r, m, n, name, r_eff
        );
    }
    let f = svd(w)?;
    Ok(build_partition(&f.u, &f.s, &f.vt, r_eff, m, n, name))
}

fn build_partition(
    u: &Array,
    s: &Array,
    vt: &Array,
    r: usize,
    m: usize,
    n: usize,
    name: &str,
) -> FactoredMatrix {
    let p = m.min(n);
    let take_cols = |src: &Array, lo: usize, hi: usize| -> Array {
        let mut out = Array::zeros(&[src.rows(), hi - lo]);
        for i in 0..src.rows() {
            for (jj, j) in (lo..hi).enumerate() {
                out.set2(i, jj, src.at2(i, j));
            }
        }
        out
    };
    let v = vt.transpose2(); // n x p
    let u_train = take_cols(u, 0, r);
    let u_frozen = take_cols(u, r, p);
    let v_train = take_cols(&v, 0, r);
    let v_frozen = take_cols(&v, r, p);
    let s_train = Array::new(vec![r], s.data()[..r].to_vec()).unwrap();
    let s_frozen = Array::new(vec![p - r], s.data()[r..].to_vec()).unwrap();

    let frozen_product = product(&u_frozen, &s_frozen, &v_frozen);

    FactoredMatrix {
        u_train: Parameter::new(format!("{name}.u_train"), u_train, true),
        s_train: Parameter::new(format!("{name}.s_train"), s_train, true),
        v_train: Parameter::new(format!("{name}.v_train"), v_train, true),
        u_frozen: Parameter::new(format!("{name}.u_frozen"), u_frozen, false),
        s_frozen: Parameter::new(format!("{name}.s_frozen"), s_frozen, false),
        v_frozen: Parameter::new(format!("{name}.v_frozen"), v_frozen, false),
        r,
        m,
        n,
        frozen_product,
        name: name.to_string(),
    }
}

/// u diag(s) v^T for plain arrays (u: m x r, s: r, v: n x r).
fn product(u: &Array, s: &Array, v: &Array) -> Array {
    let (m, r) = (u.rows(), u.cols());
    let n = v.rows();
    let mut us = Array::zeros(&[m, r]);
    for i in 0..m {
        for j in 0..r {
            us.set2(i, j, u.at2(i, j) * s.data()[j]);
        }
    }
    let mut out = Array::zeros(&[m, n]);
    for i in 0..m {
        for k in 0..r {
            let a = us.at2(i, k);
            if a == 0.0 {
                continue;
            }
            for j in 0..n {
                out.data_mut()[i * n + j] += a * v.at2(j, k);
            }
        }
    }
    out
}

impl FactoredMatrix {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn p(&self) -> usize {
        self.m.min(self.n)
    }

    /// Effective weight `W_train + W_frozen` as a plain array.
    pub fn merge(&self) -> Array {
        let t = product(
            &self.u_train.borrow().value,
            &self.s_train.borrow().value,
            &self.v_train.borrow().value,
        );
        t.add(&self.frozen_product).unwrap()
    }

    /// Record the merged weight on the tape; differentiable w.r.t. the three
    /// trainable factors only.
    pub fn merged_node(&self, tape: &mut Tape) -> Result<NodeId> {
        let u = tape.param(&self.u_train);
        let s = tape.param(&self.s_train);
        let v = tape.param(&self.v_train);
        let us = tape.col_scale(u, s)?;
        let train = tape.matmul_nt(us, v)?;
        let frozen = tape.constant(self.frozen_product.clone());
        tape.add(train, frozen)
    }

    /// Merged weight reshaped to a conv kernel, on the tape.
    pub fn conv_weight_node(&self, tape: &mut Tape, geom: &ConvGeometry) -> Result<NodeId> {
        let w = self.merged_node(tape)?;
        tape.matrix_to_conv_weight(w, geom.c_out, geom.c_in, geom.k)
    }

    /// Re-run the full SVD of the merged weight and re-partition at `r_new`
    /// (clamped per layer). No-op when the rank is unchanged.
    pub fn set_trainable_rank(&mut self, r_new: usize) -> Result<()> {
        let r_eff = r_new.clamp(1, self.p());
        if r_eff == self.r {
            return Ok(());
        }
        self.repartition(r_eff)
    }

    /// Unconditional merge + SVD + split (also reorthonormalizes the factors).
    pub fn repartition(&mut self, r_new: usize) -> Result<()> {
        let w = self.merge();
        let f = svd(&w)?;
        let next = build_partition(&f.u, &f.s, &f.vt, r_new.clamp(1, self.p()), self.m, self.n, &self.name);
        *self = next;
        Ok(())
    }

    /// Per-step alternative to the epoch-boundary re-SVD: reorthonormalize
    /// u_train and v_train via QR, folding the triangular residues into
    /// s_train as a diagonal approximation.
    pub fn qr_refresh(&mut self) -> Result<()> {
        let qu = qr_orthonormalize(&self.u_train.borrow().value)?;
        let qv = qr_orthonormalize(&self.v_train.borrow().value)?;
        // W_train = (Qu Ru) diag(s) (Qv Rv)^T; approximate Ru diag(s) Rv^T by
        // its diagonal.
        let r = self.r;
        let mut s_new = Array::zeros(&[r]);
        {
            let s = &self.s_train.borrow().value;
            for j in 0..r {
                s_new.data_mut()[j] = qu.r.at2(j, j) * s.data()[j] * qv.r.at2(j, j);
            }
        }
        self.u_train.borrow_mut().value = qu.q;
        self.v_train.borrow_mut().value = qv.q;
        self.s_train.borrow_mut().value = s_new;
        Ok(())
    }

    /// Trainable scalar count: r * (m + n + 1).
    pub fn trainable_param_count(&self) -> usize {
        self.r * (self.m + self.n + 1)
    }

    pub fn trainable_params(&self) -> Vec<ParamRef> {
        vec![
            self.u_train.clone(),
            self.s_train.clone(),
            self.v_train.clone(),
        ]
    }

    pub fn all_params(&self) -> Vec<ParamRef> {
        vec![
            self.u_train.clone(),
            self.s_train.clone(),
            self.v_train.clone(),
            self.u_frozen.clone(),
            self.s_frozen.clone(),
            self.v_frozen.clone(),
        ]
    }

    /// Rebuild the cached frozen product (after loading factor values from a
    /// checkpoint).
    pub fn refresh_frozen_cache(&mut self) {
        self.frozen_product = product(
            &self.u_frozen.borrow().value,
            &self.s_frozen.borrow().value,
            &self.v_frozen.borrow().value,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Adam;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn orthonormal_tol(cols: &Array, tol: f64) -> bool {
        let g = cols.transpose2().matmul(cols).unwrap();
        let r = cols.cols();
        (0..r).all(|i| {
            (0..r).all(|j| {
                let e = if i == j { 1.0 } else { 0.0 };
                (g.at2(i, j) - e).abs() < tol
            })
        })
    }

    #[test]
    fn partition_diag_rank1() {
        let w = Array::new(vec![2, 2], vec![3.0, 0.0, 0.0, 1.0]).unwrap();
        let f = svd_partition(&w, 1, "t").unwrap();
        let w_train = super::product(
            &f.u_train.borrow().value,
            &f.s_train.borrow().value,
            &f.v_train.borrow().value,
        );
        assert!(
            w_train.rel_frobenius_dist(&Array::new(vec![2, 2], vec![3.0, 0.0, 0.0, 0.0]).unwrap())
                < 1e-12
        );
        assert!(
            f.frozen_product
                .rel_frobenius_dist(&Array::new(vec![2, 2], vec![0.0, 0.0, 0.0, 1.0]).unwrap())
                < 1e-12
        );
        assert!(f.merge().rel_frobenius_dist(&w) < 1e-12);
    }

    #[test]
    fn full_rank_has_empty_frozen() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = Array::randn(&[4, 3], &mut rng);
        let f = svd_partition(&w, 3, "t").unwrap();
        assert_eq!(f.s_frozen.borrow().value.numel(), 0);
        assert!(f.frozen_product.frobenius_norm() == 0.0);
    }

    #[test]
    fn partition_reconstructs_and_orders() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = Array::randn(&[320, 32], &mut rng);
        let f = svd_partition(&w, 8, "t").unwrap();
        assert!(f.merge().rel_frobenius_dist(&w) < 1e-10);
        let smin_train = f
            .s_train
            .borrow()
            .value
            .data()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        let smax_frozen = f
            .s_frozen
            .borrow()
            .value
            .data()
            .iter()
            .cloned()
            .fold(0.0, f64::max);
        assert!(smin_train >= smax_frozen);
        assert!(orthonormal_tol(&f.u_train.borrow().value, 1e-10));
        assert!(orthonormal_tol(&f.v_train.borrow().value, 1e-10));
    }

    #[test]
    fn rank_out_of_range_is_clamped() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = Array::randn(&[4, 3], &mut rng);
        let f = svd_partition(&w, 99, "t").unwrap();
        assert_eq!(f.r, 3);
        let f0 = svd_partition(&w, 0, "t").unwrap();
        assert_eq!(f0.r, 1);
    }

    #[test]
    fn set_rank_preserves_merge() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = Array::randn(&[10, 6], &mut rng);
        let mut f = svd_partition(&w, 4, "t").unwrap();
        let before = f.merge();
        f.set_trainable_rank(2).unwrap();
        assert_eq!(f.r, 2);
        assert!(f.merge().rel_frobenius_dist(&before) < 1e-10);
        // same-rank call is a no-op
        let u_before = f.u_train.borrow().value.clone();
        f.set_trainable_rank(2).unwrap();
        assert_eq!(f.u_train.borrow().value.data(), u_before.data());
    }

    #[test]
    fn gradient_step_stays_in_trainable_subspace() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = Array::randn(&[8, 6], &mut rng);
        let f = svd_partition(&w, 2, "t").unwrap();
        let w_old = f.merge();

        // One optimizer step on a simple loss.
        let mut tape = Tape::new();
        let merged = f.merged_node(&mut tape).unwrap();
        let sq = tape.mul(merged, merged).unwrap();
        let loss = tape.sum(sq);
        tape.backward(loss).unwrap();
        let mut opt = Adam::new(1e-2);
        opt.step(&f.all_params());

        let w_new = f.merge();
        let delta = w_new.sub(&w_old).unwrap();
        // The frozen-subspace component u_frozen^T (W_new - W_old) v_frozen is
        // second order in the step (it needs both U and V to move), so it must
        // be far smaller than the update itself.
        let uf = f.u_frozen.borrow().value.clone();
        let vf = f.v_frozen.borrow().value.clone();
        let proj = uf.transpose2().matmul(&delta).unwrap().matmul(&vf).unwrap();
        let dn = delta.frobenius_norm();
        assert!(dn > 1e-6, "optimizer step did nothing");
        assert!(
            proj.frobenius_norm() < 10.0 * dn * dn,
            "proj {} vs delta {}",
            proj.frobenius_norm(),
            dn
        );
    }

    #[test]
    fn repartition_after_training_restores_orthonormality() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let w = Array::randn(&[8, 6], &mut rng);
        let mut f = svd_partition(&w, 3, "t").unwrap();
        let mut opt = Adam::new(5e-2);
        for _ in 0..10 {
            let mut tape = Tape::new();
            let merged = f.merged_node(&mut tape).unwrap();
            let sq = tape.mul(merged, merged).unwrap();
            let loss = tape.sum(sq);
            opt.zero_grad(&f.all_params());
            tape.backward(loss).unwrap();
            opt.step(&f.all_params());
        }
        assert!(!orthonormal_tol(&f.u_train.borrow().value, 1e-8));
        f.set_trainable_rank(2).unwrap();
        assert!(orthonormal_tol(&f.u_train.borrow().value, 1e-6));
        assert!(orthonormal_tol(&f.v_train.borrow().value, 1e-6));
    }

    #[test]
    fn qr_refresh_orthonormalizes_and_preserves_merge() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = Array::randn(&[8, 6], &mut rng);
        let mut f = svd_partition(&w, 3, "t").unwrap();
        // Perturb the factors slightly.
        for p in [&f.u_train, &f.v_train] {
            let mut p = p.borrow_mut();
            let noise = Array::randn(p.value.shape(), &mut rng).scale(1e-4);
            p.value = p.value.add(&noise).unwrap();
        }
        let before = f.merge();
        f.qr_refresh().unwrap();
        assert!(orthonormal_tol(&f.u_train.borrow().value, 1e-10));
        assert!(orthonormal_tol(&f.v_train.borrow().value, 1e-10));
        assert!(f.merge().rel_frobenius_dist(&before) < 1e-3);
    }

    #[test]
    fn qr_refresh_noop_on_orthonormal_factors() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = Array::randn(&[8, 6], &mut rng);
        let mut f = svd_partition(&w, 3, "t").unwrap();
        let before = f.merge();
        f.qr_refresh().unwrap();
        assert!(f.merge().rel_frobenius_dist(&before) < 1e-10);
    }

    #[test]
    fn trainable_param_count_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = Array::randn(&[320, 32], &mut rng);
        let f = svd_partition(&w, 8, "t").unwrap();
        assert_eq!(f.trainable_param_count(), 8 * 353);
        let w1 = Array::randn(&[1, 1], &mut rng);
        let f1 = svd_partition(&w1, 1, "t").unwrap();
        assert_eq!(f1.trainable_param_count(), 3);
    }
}
