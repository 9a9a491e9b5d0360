//! SVD and QR kernels. These never enter the autodiff graph: factorization is
//! a between-epoch re-parameterization event, so gradients never flow through it.

use nalgebra::DMatrix;

use crate::numerics::array::Array;
use crate::numerics::error::DriftError;
use crate::Result;

/// Thin SVD `a = U diag(S) Vt` with `p = min(m, n)`.
///
/// Singular values are sorted non-increasing. Sign ambiguity is resolved by
/// making the first nonzero entry of each `U` column positive, so repeated
/// factorizations of the same matrix are deterministic.
#[derive(Clone, Debug)]
pub struct SvdResult {
    /// m x p
    pub u: Array,
    /// p
    pub s: Array,
    /// p x n
    pub vt: Array,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Array {
        let (m, p) = (self.u.rows(), self.u.cols());
        let n = self.vt.cols();
        let mut us = Array::zeros(&[m, p]);
        for i in 0..m {
            for j in 0..p {
                us.set2(i, j, self.u.at2(i, j) * self.s.data()[j]);
            }
        }
        let mut out = Array::zeros(&[m, n]);
        for i in 0..m {
            for k in 0..p {
                let a = us.at2(i, k);
                for j in 0..n {
                    out.data_mut()[i * n + j] += a * self.vt.at2(k, j);
                }
            }
        }
        out
    }
}

fn to_dmatrix(a: &Array) -> DMatrix<f64> {
    let (m, n) = (a.rows(), a.cols());
    DMatrix::from_row_slice(m, n, a.data())
}

fn from_dmatrix(m: &DMatrix<f64>) -> Array {
    let mut out = Array::zeros(&[m.nrows(), m.ncols()]);
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.set2(i, j, m[(i, j)]);
        }
    }
    out
}

/// Thin SVD of a 2-D array.
pub fn svd(a: &Array) -> Result<SvdResult> {
    if a.shape().len() != 2 {
        return Err(DriftError::Dimension("svd expects a 2-D array".into()));
    }
    if !a.all_finite() {
        return Err(DriftError::Numerical("svd input has non-finite entries".into()));
    }
    let (m, n) = (a.rows(), a.cols());
    let p = m.min(n);
    let mat = to_dmatrix(a);
    let svd = mat
        .try_svd(true, true, f64::EPSILON, 1000)
        .ok_or_else(|| DriftError::Numerical("svd did not converge within 1000 iterations".into()))?;
    let u_full = svd.u.expect("requested u");
    let vt_full = svd.v_t.expect("requested v_t");
    let sing = svd.singular_values;

    // Sort by singular value, descending; stable index order breaks ties.
    let mut idx: Vec<usize> = (0..p).collect();
    idx.sort_by(|&i, &j| sing[j].partial_cmp(&sing[i]).unwrap().then(i.cmp(&j)));

    let mut u = Array::zeros(&[m, p]);
    let mut s = Array::zeros(&[p]);
    let mut vt = Array::zeros(&[p, n]);
    for (col, &k) in idx.iter().enumerate() {
        s.data_mut()[col] = sing[k];
        // Sign convention: first entry of the U column with |.| > 0 is positive.
        let mut sign = 1.0;
        for i in 0..m {
            let v = u_full[(i, k)];
            if v != 0.0 {
                sign = v.signum();
                break;
            }
        }
        for i in 0..m {
            u.set2(i, col, sign * u_full[(i, k)]);
        }
        for j in 0..n {
            vt.set2(col, j, sign * vt_full[(k, j)]);
        }
    }
    Ok(SvdResult { u, s, vt })
}

/// Result of [`qr_orthonormalize`]. `rank_deficient` flags inputs whose columns
/// did not span an r-dimensional space; the returned columns are still orthonormal.
#[derive(Clone, Debug)]
pub struct QrResult {
    pub q: Array,
    /// r x r upper-triangular factor.
    pub r: Array,
    pub rank_deficient: bool,
}

/// Orthonormalize the columns of an m x r array via Householder QR.
pub fn qr_orthonormalize(a: &Array) -> Result<QrResult> {
    if a.shape().len() != 2 {
        return Err(DriftError::Dimension("qr expects a 2-D array".into()));
    }
    let (m, r) = (a.rows(), a.cols());
    if r > m {
        return Err(DriftError::Dimension(format!(
            "qr_orthonormalize needs r <= m, got {}x{}",
            m, r
        )));
    }
    let qr = to_dmatrix(a).qr();
    let q = qr.q();
    let rm = qr.r();
    let scale = a.frobenius_norm().max(1.0);
    let mut rank_deficient = false;
    let mut q_out = Array::zeros(&[m, r]);
    let mut r_out = Array::zeros(&[r, r]);
    for j in 0..r {
        // Fix signs so the diagonal of R is non-negative.
        let d = rm[(j, j)];
        let sign = if d < 0.0 { -1.0 } else { 1.0 };
        if d.abs() < 1e-12 * scale {
            rank_deficient = true;
        }
        for i in 0..m {
            q_out.set2(i, j, sign * q[(i, j)]);
        }
        for k in j..r {
            r_out.set2(j, k, sign * rm[(j, k)]);
        }
    }
    Ok(QrResult {
        q: q_out,
        r: r_out,
        rank_deficient,
    })
}

pub fn from_nalgebra(m: &DMatrix<f64>) -> Array {
    from_dmatrix(m)
}
