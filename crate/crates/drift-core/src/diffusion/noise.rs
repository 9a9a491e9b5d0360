//! DDPM beta schedule and derived quantities.

use serde::{Deserialize, Serialize};

use crate::numerics::Array;
use crate::DriftError;
use crate::Result;

/// Fixed-variance DDPM schedule: `sigma_t^2 = beta_t`, `alpha_bar_t` strictly
/// decreasing. Timesteps are 1-based.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear betas from `beta_start` to `beta_end` over `t_diff` steps.
    pub fn linear(t_diff: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if t_diff == 0 {
            return Err(DriftError::Config("t_diff must be positive".into()));
        }
        let betas: Vec<f64> = (0..t_diff)
            .map(|i| {
                if t_diff == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (t_diff - 1) as f64
                }
            })
            .collect();
        if betas.iter().any(|&b| !(0.0..1.0).contains(&b)) {
            return Err(DriftError::Config("betas must lie in (0, 1)".into()));
        }
        let mut alpha_bars = Vec::with_capacity(t_diff);
        let mut acc = 1.0;
        for &b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        Ok(NoiseSchedule { betas, alpha_bars })
    }

    /// Desk-scale default: 100 steps, betas 1e-4 to 2e-2.
    pub fn default_desk() -> Self {
        NoiseSchedule::linear(100, 1e-4, 2e-2).unwrap()
    }

    pub fn t_diff(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.betas[t - 1])
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.alpha_bars[t - 1])
    }

    pub fn sigma(&self, t: usize) -> Result<f64> {
        Ok(self.beta(t)?.sqrt())
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.betas.len() {
            return Err(DriftError::Contract(format!(
                "timestep {} out of range 1..={}",
                t,
                self.betas.len()
            )));
        }
        Ok(())
    }
}

/// Closed-form forward diffusion at a single timestep:
/// `sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) noise`.
pub fn forward_diffuse(x0: &Array, t: usize, noise: &Array, ns: &NoiseSchedule) -> Result<Array> {
    if noise.shape() != x0.shape() {
        return Err(DriftError::Dimension("noise shape must match x0".into()));
    }
    let ab = ns.alpha_bar(t)?;
    let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
    let mut out = x0.clone();
    for i in 0..out.numel() {
        out.data_mut()[i] = sa * x0.data()[i] + sn * noise.data()[i];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn alpha_bar_strictly_decreasing() {
        let ns = NoiseSchedule::default_desk();
        assert!(ns.alpha_bars[0] > 0.0 && ns.alpha_bars[0] <= 1.0);
        for w in ns.alpha_bars.windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn zero_beta_limit_returns_x0() {
        // betas ~ 0 gives alpha_bar ~ 1, so the diffused sample is x0.
        let ns = NoiseSchedule::linear(10, 1e-15, 1e-15).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x0 = Array::randn(&[3, 4], &mut rng);
        let noise = Array::randn(&[3, 4], &mut rng);
        let out = forward_diffuse(&x0, 10, &noise, &ns).unwrap();
        assert!(out.rel_frobenius_dist(&x0) < 1e-6);
    }

    #[test]
    fn out_of_range_t_is_rejected() {
        let ns = NoiseSchedule::default_desk();
        let x0 = Array::zeros(&[2]);
        assert!(forward_diffuse(&x0, 0, &Array::zeros(&[2]), &ns).is_err());
        assert!(forward_diffuse(&x0, 101, &Array::zeros(&[2]), &ns).is_err());
    }

    #[test]
    fn terminal_step_decorrelates_from_x0() {
        // With a strong schedule alpha_bar_T ~ 0; correlation of x_T with x0
        // over many samples should be small.
        let ns = NoiseSchedule::linear(100, 1e-3, 0.2).unwrap();
        assert!(ns.alpha_bar(100).unwrap() < 1e-3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 1000;
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let x0 = Array::randn(&[1], &mut rng);
            let noise = Array::randn(&[1], &mut rng);
            let xt = forward_diffuse(&x0, 100, &noise, &ns).unwrap();
            xs.push(x0.data()[0]);
            ys.push(xt.data()[0]);
        }
        let mx = xs.iter().sum::<f64>() / n as f64;
        let my = ys.iter().sum::<f64>() / n as f64;
        let cov: f64 = xs.iter().zip(&ys).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = xs.iter().map(|a| (a - mx) * (a - mx)).sum();
        let vy: f64 = ys.iter().map(|b| (b - my) * (b - my)).sum();
        let corr = cov / (vx * vy).sqrt();
        assert!(corr.abs() <= 0.05, "corr = {}", corr);
    }

    #[test]
    fn stepwise_chain_matches_closed_form_in_distribution() {
        // Iterate q(x_t | x_{t-1}) t times and compare per-coordinate mean and
        // variance against the closed form over many samples.
        let ns = NoiseSchedule::linear(20, 1e-3, 5e-2).unwrap();
        let t = 20;
        let x0 = 0.7;
        let n = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let mut x = x0;
            for step in 1..=t {
                let b = ns.beta(step).unwrap();
                let z: f64 = rng.sample(StandardNormal);
                x = (1.0 - b).sqrt() * x + b.sqrt() * z;
            }
            samples.push(x);
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        let ab = ns.alpha_bar(t).unwrap();
        let exp_mean = ab.sqrt() * x0;
        let exp_var = 1.0 - ab;
        // 3 sigma tolerances for the Monte-Carlo estimates.
        let mean_se = (exp_var / n as f64).sqrt();
        let var_se = exp_var * (2.0 / n as f64).sqrt();
        assert!((mean - exp_mean).abs() < 3.0 * mean_se, "mean {} vs {}", mean, exp_mean);
        assert!((var - exp_var).abs() < 3.0 * var_se, "var {} vs {}", var, exp_var);
    }
}
