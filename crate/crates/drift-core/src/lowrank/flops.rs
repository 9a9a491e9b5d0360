//! Analytic FLOP counting for conv layers (per batch element).
//!
//! Counts multiply and add as separate operations. The factored layer's
//! forward cost is independent of the trainable rank: the merge always runs
//! over all p = min(m, n) components and the convolution always uses the full
//! kernel. The LoRA adapter path is exactly linear in r with zero intercept.

use crate::lowrank::ConvGeometry;

/// Plain 1-D convolution: multiply-accumulate over (C_in, k) per output value,
/// plus the bias add.
pub fn conv1d_flops(geom: &ConvGeometry, l_in: usize, bias: bool) -> u64 {
    let l_out = geom.l_out(l_in) as u64;
    let per_out = 2 * (geom.c_in * geom.k) as u64;
    let conv = geom.c_out as u64 * l_out * per_out;
    if bias {
        conv + geom.c_out as u64 * l_out
    } else {
        conv
    }
}

/// Factored forward: merge (column scale + product + frozen add) plus the
/// plain convolution. None of the terms depend on the trainable rank.
pub fn factored_forward_flops(geom: &ConvGeometry, l_in: usize, bias: bool) -> u64 {
    let (m, n) = (geom.m() as u64, geom.n() as u64);
    let p = m.min(n);
    let merge = m * p + 2 * m * n * p + m * n;
    merge + conv1d_flops(geom, l_in, bias)
}

/// FLOPs of the adapter path alone (down conv + 1x1 up mix). Exactly
/// `r * 2 * l_out * (C_in * k + C_out)`: linear in r through the origin.
pub fn lora_adapter_flops(geom: &ConvGeometry, l_in: usize, r: usize) -> u64 {
    let l_out = geom.l_out(l_in) as u64;
    r as u64 * 2 * l_out * (geom.c_in * geom.k + geom.c_out) as u64
}

/// Full LoRA layer: base conv, adapter path, and the alpha-scale-and-add.
pub fn lora_forward_flops(geom: &ConvGeometry, l_in: usize, r: usize, bias: bool) -> u64 {
    let l_out = geom.l_out(l_in) as u64;
    conv1d_flops(geom, l_in, bias) + lora_adapter_flops(geom, l_in, r) + 2 * geom.c_out as u64 * l_out
}
