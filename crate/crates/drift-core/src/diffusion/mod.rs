//! DDPM machinery and the conditional 1-D conv U-Net noise predictor.

mod net;
mod noise;

pub use net::{
    ActionNormalizer, BlockMode, ConvBlock, NetConfig, NetState, PolicyNet,
};
pub use noise::{forward_diffuse, NoiseSchedule};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::numerics::{Array, Tape};
use crate::Result;

/// Noise-prediction loss: sample a timestep and noise per batch element,
/// diffuse the clean actions, and score the net's prediction with MSE.
///
/// Returns the recorded tape and loss node so callers can run backward.
pub fn ddpm_loss<R: Rng>(
    net: &PolicyNet,
    x0: &Array,
    obs: &Array,
    ns: &NoiseSchedule,
    rng: &mut R,
) -> Result<(Tape, crate::numerics::NodeId)> {
    let b = x0.shape()[0];
    let mut ts = Vec::with_capacity(b);
    for _ in 0..b {
        ts.push(rng.gen_range(1..=ns.t_diff()));
    }
    let noise = Array::randn(x0.shape(), rng);
    let xt = forward_diffuse_batch(x0, &ts, &noise, ns)?;
    let mut tape = Tape::new();
    let pred = net.forward(&mut tape, &xt, &ts, obs)?;
    let target = tape.constant(noise);
    let loss = tape.mse(pred, target)?;
    Ok((tape, loss))
}

/// Closed-form forward diffusion with a per-element timestep.
pub fn forward_diffuse_batch(
    x0: &Array,
    ts: &[usize],
    noise: &Array,
    ns: &NoiseSchedule,
) -> Result<Array> {
    let b = x0.shape()[0];
    let per = x0.numel() / b;
    let mut out = x0.clone();
    for (bi, &t) in ts.iter().enumerate() {
        let ab = ns.alpha_bar(t)?;
        let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
        for j in 0..per {
            let idx = bi * per + j;
            out.data_mut()[idx] = sa * x0.data()[idx] + sn * noise.data()[idx];
        }
    }
    Ok(out)
}

/// Run the reverse chain from pure noise, conditioned on `obs`, returning a
/// denoised (unnormalized) action horizon of shape (A, H). Deterministic
/// given the RNG.
pub fn sample_actions<R: Rng>(
    net: &PolicyNet,
    obs: &[f64],
    ns: &NoiseSchedule,
    rng: &mut R,
) -> Result<Array> {
    let a = net.cfg.action_dim;
    let h = net.cfg.horizon;
    let obs_arr = Array::new(vec![1, obs.len()], obs.to_vec())?;
    let mut x = Array::randn(&[1, a, h], rng);
    for t in (1..=ns.t_diff()).rev() {
        let mut tape = Tape::new();
        let pred = net.forward(&mut tape, &x, &[t], &obs_arr)?;
        let eps = tape.value(pred).clone();
        let beta = ns.beta(t)?;
        let alpha = 1.0 - beta;
        let ab = ns.alpha_bar(t)?;
        let coef = beta / (1.0 - ab).sqrt();
        let inv_sqrt_alpha = 1.0 / alpha.sqrt();
        let sigma = ns.sigma(t)?;
        for i in 0..x.numel() {
            let mean = inv_sqrt_alpha * (x.data()[i] - coef * eps.data()[i]);
            let z: f64 = if t > 1 { rng.sample(StandardNormal) } else { 0.0 };
            x.data_mut()[i] = mean + sigma * z;
        }
    }
    let unit = x.reshaped(&[a, h])?;
    Ok(net.normalizer().from_unit(&unit))
}
