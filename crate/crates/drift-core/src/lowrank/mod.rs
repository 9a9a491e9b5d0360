//! Rank-modulated and LoRA-adapted 1-D convolution layers.
//!
//! A conv kernel `(C_out, C_in, k)` is viewed as an `(m, n)` matrix with
//! `m = C_out * k`, `n = C_in`. The factored form splits its SVD at rank `r`
//! into trainable and frozen parts; the forward pass always uses the merged
//! full-rank weight, so forward cost does not depend on `r`.

mod factored;
mod flops;
mod lora;

pub use factored::{svd_partition, FactoredMatrix};
pub use flops::{conv1d_flops, factored_forward_flops, lora_adapter_flops, lora_forward_flops};
pub use lora::LoraConv;

use serde::{Deserialize, Serialize};

use crate::numerics::Array;
use crate::DriftError;
use crate::Result;

/// Geometry of a 1-D convolution layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub c_out: usize,
    pub c_in: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn new(c_out: usize, c_in: usize, k: usize, stride: usize, padding: usize) -> Self {
        ConvGeometry {
            c_out,
            c_in,
            k,
            stride,
            padding,
        }
    }

    /// Rows of the reshaped weight matrix.
    pub fn m(&self) -> usize {
        self.c_out * self.k
    }

    /// Columns of the reshaped weight matrix.
    pub fn n(&self) -> usize {
        self.c_in
    }

    /// Highest possible rank of this layer's weight matrix.
    pub fn layer_r_max(&self) -> usize {
        self.m().min(self.n())
    }

    pub fn l_out(&self, l_in: usize) -> usize {
        (l_in + 2 * self.padding - self.k) / self.stride + 1
    }
}

/// View a conv kernel `(C_out, C_in, k)` as an `(m, n)` matrix, `m = C_out * k`,
/// `n = C_in`. Bijective with [`reshape_matrix_to_conv`].
pub fn reshape_conv_to_matrix(w: &Array) -> Result<Array> {
    if w.shape().len() != 3 {
        return Err(DriftError::Dimension(
            "reshape_conv_to_matrix expects C_out x C_in x k".into(),
        ));
    }
    let (c_out, c_in, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let mut out = Array::zeros(&[c_out * k, c_in]);
    for o in 0..c_out {
        for i in 0..c_in {
            for kk in 0..k {
                let v = w.data()[(o * c_in + i) * k + kk];
                out.set2(o * k + kk, i, v);
            }
        }
    }
    Ok(out)
}

/// Inverse of [`reshape_conv_to_matrix`].
pub fn reshape_matrix_to_conv(w: &Array, c_out: usize, c_in: usize, k: usize) -> Result<Array> {
    if w.shape() != [c_out * k, c_in] {
        return Err(DriftError::Dimension(format!(
            "reshape_matrix_to_conv: expected ({}, {}), got {:?}",
            c_out * k,
            c_in,
            w.shape()
        )));
    }
    let mut out = Array::zeros(&[c_out, c_in, k]);
    for o in 0..c_out {
        for i in 0..c_in {
            for kk in 0..k {
                out.data_mut()[(o * c_in + i) * k + kk] = w.at2(o * k + kk, i);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn geometry_rank_bound() {
        let g = ConvGeometry::new(8, 4, 3, 1, 1);
        assert_eq!(g.m(), 24);
        assert_eq!(g.n(), 4);
        assert_eq!(g.layer_r_max(), 4);

        let g1 = ConvGeometry::new(1, 1, 1, 1, 0);
        assert_eq!((g1.m(), g1.n()), (1, 1));
    }

    #[test]
    fn reshape_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = Array::randn(&[8, 4, 3], &mut rng);
        let m = reshape_conv_to_matrix(&w).unwrap();
        assert_eq!(m.shape(), &[24, 4]);
        let back = reshape_matrix_to_conv(&m, 8, 4, 3).unwrap();
        assert_eq!(back.data(), w.data());
    }
}
