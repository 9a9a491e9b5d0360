//! Reverse-mode autodiff over a linear op tape.
//!
//! A forward pass records nodes in evaluation order; [`Tape::backward`] walks the
//! tape in reverse and pushes vector-Jacobian products toward the leaves.
//! Parameter leaves with `requires_grad` accumulate into `Parameter::grad`;
//! frozen leaves are left untouched.

use crate::numerics::array::{Array, ParamRef};
use crate::numerics::error::DriftError;
use crate::Result;

pub type NodeId = usize;

type Vjp = Box<dyn Fn(&Array) -> Array>;

struct Node {
    value: Array,
    parents: Vec<(NodeId, Vjp)>,
    param: Option<ParamRef>,
}

/// One forward pass worth of recorded operations.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Array, parents: Vec<(NodeId, Vjp)>) -> NodeId {
        self.nodes.push(Node {
            value,
            parents,
            param: None,
        });
        self.nodes.len() - 1
    }

    pub fn value(&self, id: NodeId) -> &Array {
        &self.nodes[id].value
    }

    pub fn constant(&mut self, a: Array) -> NodeId {
        self.push(a, vec![])
    }

    /// Leaf node for a parameter; its current value is snapshotted.
    pub fn param(&mut self, p: &ParamRef) -> NodeId {
        let value = p.borrow().value.clone();
        self.nodes.push(Node {
            value,
            parents: vec![],
            param: Some(p.clone()),
        });
        self.nodes.len() - 1
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(
            v,
            vec![
                (a, Box::new(|g: &Array| g.clone())),
                (b, Box::new(|g: &Array| g.clone())),
            ],
        ))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(
            v,
            vec![
                (a, Box::new(|g: &Array| g.clone())),
                (b, Box::new(|g: &Array| g.scale(-1.0))),
            ],
        ))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        let v = av.mul(&bv)?;
        Ok(self.push(
            v,
            vec![
                (a, Box::new(move |g: &Array| g.mul(&bv).unwrap())),
                (b, Box::new(move |g: &Array| g.mul(&av).unwrap())),
            ],
        ))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).scale(c);
        self.push(v, vec![(a, Box::new(move |g: &Array| g.scale(c)))])
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        let v = av.matmul(&bv)?;
        let bt = bv.transpose2();
        let at = av.transpose2();
        Ok(self.push(
            v,
            vec![
                (a, Box::new(move |g: &Array| g.matmul(&bt).unwrap())),
                (b, Box::new(move |g: &Array| at.matmul(g).unwrap())),
            ],
        ))
    }

    /// `a (m x k) . b^T (n x k) -> m x n` without materializing the transpose node.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        let v = av.matmul(&bv.transpose2())?;
        let av2 = av.clone();
        Ok(self.push(
            v,
            vec![
                (a, Box::new(move |g: &Array| g.matmul(&bv).unwrap())),
                (b, Box::new(move |g: &Array| g.transpose2().matmul(&av2).unwrap())),
            ],
        ))
    }

    /// Column scaling `mat (m x r) . diag(s)` with `s` a length-r vector.
    pub fn col_scale(&mut self, mat: NodeId, s: NodeId) -> Result<NodeId> {
        let mv = self.value(mat).clone();
        let sv = self.value(s).clone();
        let (m, r) = (mv.rows(), mv.cols());
        if sv.numel() != r {
            return Err(DriftError::Dimension(format!(
                "col_scale: {} columns vs {} scales",
                r,
                sv.numel()
            )));
        }
        let mut out = Array::zeros(&[m, r]);
        for i in 0..m {
            for j in 0..r {
                out.set2(i, j, mv.at2(i, j) * sv.data()[j]);
            }
        }
        let sv2 = sv.clone();
        let mv2 = mv.clone();
        Ok(self.push(
            out,
            vec![
                (
                    mat,
                    Box::new(move |g: &Array| {
                        let mut gm = Array::zeros(&[m, r]);
                        for i in 0..m {
                            for j in 0..r {
                                gm.set2(i, j, g.at2(i, j) * sv2.data()[j]);
                            }
                        }
                        gm
                    }),
                ),
                (
                    s,
                    Box::new(move |g: &Array| {
                        let mut gs = Array::zeros(&[r]);
                        for i in 0..m {
                            for j in 0..r {
                                gs.data_mut()[j] += g.at2(i, j) * mv2.at2(i, j);
                            }
                        }
                        gs
                    }),
                ),
            ],
        ))
    }

    /// Fully connected layer: `x (B x I) . w^T (O x I) + bias (O)`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, bias: NodeId) -> Result<NodeId> {
        let xw = self.matmul_nt(x, w)?;
        self.add_row_bias(xw, bias)
    }

    /// Add a length-O bias to every row of a B x O array.
    pub fn add_row_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let xv = self.value(x).clone();
        let bv = self.value(bias).clone();
        let (bsz, o) = (xv.rows(), xv.cols());
        if bv.numel() != o {
            return Err(DriftError::Dimension("row bias length mismatch".into()));
        }
        let mut out = xv.clone();
        for i in 0..bsz {
            for j in 0..o {
                out.data_mut()[i * o + j] += bv.data()[j];
            }
        }
        Ok(self.push(
            out,
            vec![
                (x, Box::new(|g: &Array| g.clone())),
                (
                    bias,
                    Box::new(move |g: &Array| {
                        let mut gb = Array::zeros(&[o]);
                        for i in 0..bsz {
                            for j in 0..o {
                                gb.data_mut()[j] += g.at2(i, j);
                            }
                        }
                        gb
                    }),
                ),
            ],
        ))
    }

    /// 1-D cross-correlation of `x (B x C_in x L)` with `w (C_out x C_in x k)`.
    pub fn conv1d(
        &mut self,
        x: NodeId,
        w: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let xv = self.value(x).clone();
        let wv = self.value(w).clone();
        let xs = xv.shape().to_vec();
        let ws = wv.shape().to_vec();
        if xs.len() != 3 || ws.len() != 3 {
            return Err(DriftError::Dimension(
                "conv1d expects x: B x C_in x L, w: C_out x C_in x k".into(),
            ));
        }
        let (b, c_in, l) = (xs[0], xs[1], xs[2]);
        let (c_out, wc_in, k) = (ws[0], ws[1], ws[2]);
        if c_in != wc_in {
            return Err(DriftError::Dimension(format!(
                "conv1d channel mismatch: x has {}, w has {}",
                c_in, wc_in
            )));
        }
        if stride == 0 {
            return Err(DriftError::Dimension("conv1d stride must be positive".into()));
        }
        if k > l + 2 * padding {
            return Err(DriftError::Dimension(format!(
                "conv1d kernel {} exceeds padded length {}",
                k,
                l + 2 * padding
            )));
        }
        let l_out = (l + 2 * padding - k) / stride + 1;

        let out = conv1d_forward(&xv, &wv, b, c_in, l, c_out, k, stride, padding, l_out);

        let xv_b = xv.clone();
        let wv_b = wv.clone();
        let mut parents: Vec<(NodeId, Vjp)> = vec![
            (
                x,
                Box::new(move |g: &Array| {
                    conv1d_backward_x(g, &wv_b, b, c_in, l, c_out, k, stride, padding, l_out)
                }),
            ),
            (
                w,
                Box::new(move |g: &Array| {
                    conv1d_backward_w(g, &xv_b, b, c_in, l, c_out, k, stride, padding, l_out)
                }),
            ),
        ];

        let out = if let Some(bias_id) = bias {
            let bv = self.value(bias_id).clone();
            if bv.numel() != c_out {
                return Err(DriftError::Dimension("conv1d bias length mismatch".into()));
            }
            let mut with_bias = out;
            for bi in 0..b {
                for o in 0..c_out {
                    let base = (bi * c_out + o) * l_out;
                    for t in 0..l_out {
                        with_bias.data_mut()[base + t] += bv.data()[o];
                    }
                }
            }
            parents.push((
                bias_id,
                Box::new(move |g: &Array| {
                    let mut gb = Array::zeros(&[c_out]);
                    for bi in 0..b {
                        for o in 0..c_out {
                            let base = (bi * c_out + o) * l_out;
                            for t in 0..l_out {
                                gb.data_mut()[o] += g.data()[base + t];
                            }
                        }
                    }
                    gb
                }),
            ));
            with_bias
        } else {
            out
        };

        Ok(self.push(out, parents))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        let v2 = v.clone();
        self.push(
            v,
            vec![(
                a,
                Box::new(move |g: &Array| {
                    let mut out = g.clone();
                    for (o, &s) in out.data_mut().iter_mut().zip(v2.data()) {
                        *o *= s * (1.0 - s);
                    }
                    out
                }),
            )],
        )
    }

    /// Smooth nonlinearity x * sigmoid(x).
    pub fn silu(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a).clone();
        let v = av.map(|x| x / (1.0 + (-x).exp()));
        self.push(
            v,
            vec![(
                a,
                Box::new(move |g: &Array| {
                    let mut out = g.clone();
                    for (o, &x) in out.data_mut().iter_mut().zip(av.data()) {
                        let s = 1.0 / (1.0 + (-x).exp());
                        *o *= s * (1.0 + x * (1.0 - s));
                    }
                    out
                }),
            )],
        )
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let shape = av.shape().to_vec();
        let total: f64 = av.data().iter().sum();
        self.push(
            Array::scalar(total),
            vec![(
                a,
                Box::new(move |g: &Array| Array::filled(&shape, g.scalar_value())),
            )],
        )
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).numel() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Mean-squared error between two same-shape nodes (scalar output).
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        Ok(self.mean(sq))
    }

    /// Pure view: same data, new shape.
    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = self.value(a).reshaped(shape)?;
        let old_shape = self.value(a).shape().to_vec();
        Ok(self.push(
            v,
            vec![(
                a,
                Box::new(move |g: &Array| g.reshaped(&old_shape).unwrap()),
            )],
        ))
    }

    /// Reshape an (m x n) weight matrix with m = c_out * k, n = c_in into a
    /// (c_out x c_in x k) conv kernel. Bijective index permutation.
    pub fn matrix_to_conv_weight(
        &mut self,
        a: NodeId,
        c_out: usize,
        c_in: usize,
        k: usize,
    ) -> Result<NodeId> {
        let av = self.value(a);
        if av.shape() != [c_out * k, c_in] {
            return Err(DriftError::Dimension(format!(
                "matrix_to_conv_weight: expected {}x{}, got {:?}",
                c_out * k,
                c_in,
                av.shape()
            )));
        }
        let v = crate::lowrank::reshape_matrix_to_conv(av, c_out, c_in, k)?;
        Ok(self.push(
            v,
            vec![(
                a,
                Box::new(move |g: &Array| {
                    crate::lowrank::reshape_conv_to_matrix(g).expect("inverse reshape")
                }),
            )],
        ))
    }

    /// Concatenate along the channel axis: (B x C1 x L, B x C2 x L) -> B x (C1+C2) x L.
    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        let (ba, c1, l) = (av.shape()[0], av.shape()[1], av.shape()[2]);
        let (bb, c2, lb) = (bv.shape()[0], bv.shape()[1], bv.shape()[2]);
        if ba != bb || l != lb {
            return Err(DriftError::Dimension("concat_channels shape mismatch".into()));
        }
        let mut out = Array::zeros(&[ba, c1 + c2, l]);
        for bi in 0..ba {
            let src_a = &av.data()[bi * c1 * l..(bi + 1) * c1 * l];
            let src_b = &bv.data()[bi * c2 * l..(bi + 1) * c2 * l];
            let dst = &mut out.data_mut()[bi * (c1 + c2) * l..(bi + 1) * (c1 + c2) * l];
            dst[..c1 * l].copy_from_slice(src_a);
            dst[c1 * l..].copy_from_slice(src_b);
        }
        Ok(self.push(
            out,
            vec![
                (
                    a,
                    Box::new(move |g: &Array| {
                        let mut ga = Array::zeros(&[ba, c1, l]);
                        for bi in 0..ba {
                            let src = &g.data()[bi * (c1 + c2) * l..bi * (c1 + c2) * l + c1 * l];
                            ga.data_mut()[bi * c1 * l..(bi + 1) * c1 * l].copy_from_slice(src);
                        }
                        ga
                    }),
                ),
                (
                    b,
                    Box::new(move |g: &Array| {
                        let mut gb = Array::zeros(&[ba, c2, l]);
                        for bi in 0..ba {
                            let start = bi * (c1 + c2) * l + c1 * l;
                            let src = &g.data()[start..start + c2 * l];
                            gb.data_mut()[bi * c2 * l..(bi + 1) * c2 * l].copy_from_slice(src);
                        }
                        gb
                    }),
                ),
            ],
        ))
    }

    /// Nearest-neighbor upsample by 2 along the length axis.
    pub fn upsample2(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.value(a);
        if av.shape().len() != 3 {
            return Err(DriftError::Dimension("upsample2 expects B x C x L".into()));
        }
        let (b, c, l) = (av.shape()[0], av.shape()[1], av.shape()[2]);
        let mut out = Array::zeros(&[b, c, 2 * l]);
        for i in 0..b * c {
            for t in 0..l {
                let v = av.data()[i * l + t];
                out.data_mut()[i * 2 * l + 2 * t] = v;
                out.data_mut()[i * 2 * l + 2 * t + 1] = v;
            }
        }
        Ok(self.push(
            out,
            vec![(
                a,
                Box::new(move |g: &Array| {
                    let mut ga = Array::zeros(&[b, c, l]);
                    for i in 0..b * c {
                        for t in 0..l {
                            ga.data_mut()[i * l + t] =
                                g.data()[i * 2 * l + 2 * t] + g.data()[i * 2 * l + 2 * t + 1];
                        }
                    }
                    ga
                }),
            )],
        ))
    }

    /// Feature-wise affine modulation: out[b,c,l] = x[b,c,l] * (1 + scale[b,c]) + shift[b,c].
    pub fn film(&mut self, x: NodeId, scale: NodeId, shift: NodeId) -> Result<NodeId> {
        let xv = self.value(x).clone();
        let sv = self.value(scale).clone();
        let tv = self.value(shift).clone();
        let (b, c, l) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        if sv.shape() != [b, c] || tv.shape() != [b, c] {
            return Err(DriftError::Dimension("film expects scale/shift of shape B x C".into()));
        }
        let mut out = Array::zeros(&[b, c, l]);
        for bi in 0..b {
            for ci in 0..c {
                let s = 1.0 + sv.at2(bi, ci);
                let t = tv.at2(bi, ci);
                let base = (bi * c + ci) * l;
                for li in 0..l {
                    out.data_mut()[base + li] = xv.data()[base + li] * s + t;
                }
            }
        }
        let sv2 = sv.clone();
        let xv2 = xv.clone();
        Ok(self.push(
            out,
            vec![
                (
                    x,
                    Box::new(move |g: &Array| {
                        let mut gx = g.clone();
                        for bi in 0..b {
                            for ci in 0..c {
                                let s = 1.0 + sv2.at2(bi, ci);
                                let base = (bi * c + ci) * l;
                                for li in 0..l {
                                    gx.data_mut()[base + li] *= s;
                                }
                            }
                        }
                        gx
                    }),
                ),
                (
                    scale,
                    Box::new(move |g: &Array| {
                        let mut gs = Array::zeros(&[b, c]);
                        for bi in 0..b {
                            for ci in 0..c {
                                let base = (bi * c + ci) * l;
                                let mut acc = 0.0;
                                for li in 0..l {
                                    acc += g.data()[base + li] * xv2.data()[base + li];
                                }
                                gs.set2(bi, ci, acc);
                            }
                        }
                        gs
                    }),
                ),
                (
                    shift,
                    Box::new(move |g: &Array| {
                        let mut gt = Array::zeros(&[b, c]);
                        for bi in 0..b {
                            for ci in 0..c {
                                let base = (bi * c + ci) * l;
                                let mut acc = 0.0;
                                for li in 0..l {
                                    acc += g.data()[base + li];
                                }
                                gt.set2(bi, ci, acc);
                            }
                        }
                        gt
                    }),
                ),
            ],
        ))
    }

    /// Split a B x 2C array into two B x C halves (used for FiLM scale/shift heads).
    pub fn split_half_cols(&mut self, a: NodeId) -> Result<(NodeId, NodeId)> {
        let av = self.value(a).clone();
        let (b, two_c) = (av.rows(), av.cols());
        if two_c % 2 != 0 {
            return Err(DriftError::Dimension("split_half_cols needs even columns".into()));
        }
        let c = two_c / 2;
        let mut left = Array::zeros(&[b, c]);
        let mut right = Array::zeros(&[b, c]);
        for i in 0..b {
            for j in 0..c {
                left.set2(i, j, av.at2(i, j));
                right.set2(i, j, av.at2(i, j + c));
            }
        }
        let l_id = self.push(
            left,
            vec![(
                a,
                Box::new(move |g: &Array| {
                    let mut ga = Array::zeros(&[b, two_c]);
                    for i in 0..b {
                        for j in 0..c {
                            ga.set2(i, j, g.at2(i, j));
                        }
                    }
                    ga
                }),
            )],
        );
        let r_id = self.push(
            right,
            vec![(
                a,
                Box::new(move |g: &Array| {
                    let mut ga = Array::zeros(&[b, two_c]);
                    for i in 0..b {
                        for j in 0..c {
                            ga.set2(i, j + c, g.at2(i, j));
                        }
                    }
                    ga
                }),
            )],
        );
        Ok((l_id, r_id))
    }

    /// Accumulate gradients of `root` (must be scalar) into all trainable
    /// parameter leaves reachable from it.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if self.value(root).numel() != 1 {
            return Err(DriftError::Contract(
                "backward root must be a scalar node".into(),
            ));
        }
        let mut grads: Vec<Option<Array>> = vec![None; self.nodes.len()];
        grads[root] = Some(Array::filled(self.value(root).shape(), 1.0));
        for id in (0..=root).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            for (pid, vjp) in &self.nodes[id].parents {
                let contrib = vjp(&g);
                match &mut grads[*pid] {
                    Some(acc) => {
                        *acc = acc.add(&contrib)?;
                    }
                    None => grads[*pid] = Some(contrib),
                }
            }
            if let Some(p) = &self.nodes[id].param {
                let mut p = p.borrow_mut();
                if p.requires_grad {
                    p.grad = p.grad.add(&g)?;
                }
            }
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn conv1d_forward(
    x: &Array,
    w: &Array,
    b: usize,
    c_in: usize,
    l: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    padding: usize,
    l_out: usize,
) -> Array {
    let mut out = Array::zeros(&[b, c_out, l_out]);
    for bi in 0..b {
        for o in 0..c_out {
            let out_base = (bi * c_out + o) * l_out;
            for i in 0..c_in {
                let x_base = (bi * c_in + i) * l;
                let w_base = (o * c_in + i) * k;
                for t in 0..l_out {
                    let start = t * stride;
                    let mut acc = 0.0;
                    for kk in 0..k {
                        let pos = start + kk;
                        if pos < padding || pos >= padding + l {
                            continue;
                        }
                        acc += x.data()[x_base + pos - padding] * w.data()[w_base + kk];
                    }
                    out.data_mut()[out_base + t] += acc;
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv1d_backward_x(
    g: &Array,
    w: &Array,
    b: usize,
    c_in: usize,
    l: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    padding: usize,
    l_out: usize,
) -> Array {
    let mut gx = Array::zeros(&[b, c_in, l]);
    for bi in 0..b {
        for o in 0..c_out {
            let g_base = (bi * c_out + o) * l_out;
            for i in 0..c_in {
                let x_base = (bi * c_in + i) * l;
                let w_base = (o * c_in + i) * k;
                for t in 0..l_out {
                    let gv = g.data()[g_base + t];
                    if gv == 0.0 {
                        continue;
                    }
                    let start = t * stride;
                    for kk in 0..k {
                        let pos = start + kk;
                        if pos < padding || pos >= padding + l {
                            continue;
                        }
                        gx.data_mut()[x_base + pos - padding] += gv * w.data()[w_base + kk];
                    }
                }
            }
        }
    }
    gx
}

#[allow(clippy::too_many_arguments)]
fn conv1d_backward_w(
    g: &Array,
    x: &Array,
    b: usize,
    c_in: usize,
    l: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    padding: usize,
    l_out: usize,
) -> Array {
    let mut gw = Array::zeros(&[c_out, c_in, k]);
    for bi in 0..b {
        for o in 0..c_out {
            let g_base = (bi * c_out + o) * l_out;
            for i in 0..c_in {
                let x_base = (bi * c_in + i) * l;
                let w_base = (o * c_in + i) * k;
                for t in 0..l_out {
                    let gv = g.data()[g_base + t];
                    if gv == 0.0 {
                        continue;
                    }
                    let start = t * stride;
                    for kk in 0..k {
                        let pos = start + kk;
                        if pos < padding || pos >= padding + l {
                            continue;
                        }
                        gw.data_mut()[w_base + kk] += gv * x.data()[x_base + pos - padding];
                    }
                }
            }
        }
    }
    gw
}
