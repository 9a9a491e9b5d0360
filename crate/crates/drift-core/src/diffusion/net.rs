//! Conditional 1-D conv U-Net noise predictor with pluggable conv blocks.
//!
//! Every feature conv block is either plain, SVD-factored, or LoRA-adapted;
//! the mode is uniform across the net. Conditioning is feature-wise affine
//! modulation from (sinusoidal timestep embedding ++ observation embedding).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::lowrank::{
    conv1d_flops, factored_forward_flops, lora_forward_flops, reshape_conv_to_matrix,
    svd_partition, ConvGeometry, FactoredMatrix, LoraConv,
};
use crate::numerics::{Array, NodeId, ParamRef, Parameter, Tape};
use crate::DriftError;
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockMode {
    Plain,
    Factored,
    Lora,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub mode: BlockMode,
    /// Channel widths of the two U-Net levels.
    pub channels: (usize, usize),
    pub action_dim: usize,
    /// Prediction horizon H (must be even for the down/up pair).
    pub horizon: usize,
    /// Observation horizon O.
    pub obs_horizon: usize,
    /// Per-step observation dimensionality.
    pub obs_dim: usize,
    pub emb_dim: usize,
    /// Initial adapter rank when mode == lora.
    pub lora_r: usize,
    pub lora_alpha: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig::default_toy(6)
    }
}

impl NetConfig {
    pub fn default_toy(obs_dim: usize) -> Self {
        NetConfig {
            mode: BlockMode::Plain,
            channels: (32, 64),
            action_dim: 2,
            horizon: 8,
            obs_horizon: 2,
            obs_dim,
            emb_dim: 32,
            lora_r: 8,
            lora_alpha: 1.0,
        }
    }

    pub fn cond_dim(&self) -> usize {
        2 * self.emb_dim
    }

    pub fn obs_flat_dim(&self) -> usize {
        self.obs_horizon * self.obs_dim
    }
}

/// Per-dimension affine map between raw action range and [-1, 1].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ActionNormalizer {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ActionNormalizer {
    pub fn identity(dim: usize) -> Self {
        ActionNormalizer {
            lo: vec![-1.0; dim],
            hi: vec![1.0; dim],
        }
    }

    pub fn fit(actions: &[Vec<f64>], dim: usize) -> Self {
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for a in actions {
            for d in 0..dim {
                lo[d] = lo[d].min(a[d]);
                hi[d] = hi[d].max(a[d]);
            }
        }
        for d in 0..dim {
            if !lo[d].is_finite() || !hi[d].is_finite() || hi[d] - lo[d] < 1e-9 {
                lo[d] = -1.0;
                hi[d] = 1.0;
            }
        }
        ActionNormalizer { lo, hi }
    }

    /// Scale an (A, H) action block into [-1, 1] per dimension.
    pub fn to_unit(&self, a: &Array) -> Array {
        let (dim, h) = (a.shape()[0], a.shape()[1]);
        let mut out = a.clone();
        for d in 0..dim {
            let span = self.hi[d] - self.lo[d];
            for t in 0..h {
                let v = a.at2(d, t);
                out.set2(d, t, 2.0 * (v - self.lo[d]) / span - 1.0);
            }
        }
        out
    }

    pub fn from_unit(&self, a: &Array) -> Array {
        let (dim, h) = (a.shape()[0], a.shape()[1]);
        let mut out = a.clone();
        for d in 0..dim {
            let span = self.hi[d] - self.lo[d];
            for t in 0..h {
                let v = a.at2(d, t);
                out.set2(d, t, (v + 1.0) * span / 2.0 + self.lo[d]);
            }
        }
        out
    }
}

pub enum BlockWeight {
    Plain(ParamRef),
    Factored(FactoredMatrix),
    Lora(LoraConv),
}

/// Conv + FiLM + SiLU, with the conv weight in one of the three modes.
pub struct ConvBlock {
    pub geom: ConvGeometry,
    pub weight: BlockWeight,
    pub bias: ParamRef,
    pub film_w: ParamRef,
    pub film_b: ParamRef,
    name: String,
}

impl ConvBlock {
    fn new<R: Rng>(name: &str, geom: ConvGeometry, cond_dim: usize, rng: &mut R) -> Self {
        let std = (1.0 / (geom.c_in * geom.k) as f64).sqrt();
        let w = Array::randn(&[geom.c_out, geom.c_in, geom.k], rng).scale(std);
        let film_std = (1.0 / cond_dim as f64).sqrt();
        ConvBlock {
            geom,
            weight: BlockWeight::Plain(Parameter::new(format!("{name}.w"), w, true)),
            bias: Parameter::new(format!("{name}.bias"), Array::zeros(&[geom.c_out]), true),
            film_w: Parameter::new(
                format!("{name}.film_w"),
                Array::randn(&[2 * geom.c_out, cond_dim], rng).scale(film_std),
                true,
            ),
            film_b: Parameter::new(
                format!("{name}.film_b"),
                Array::zeros(&[2 * geom.c_out]),
                true,
            ),
            name: name.to_string(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Current effective conv kernel, independent of mode.
    pub fn effective_kernel(&self) -> Result<Array> {
        match &self.weight {
            BlockWeight::Plain(w) => Ok(w.borrow().value.clone()),
            BlockWeight::Factored(f) => {
                crate::lowrank::reshape_matrix_to_conv(&f.merge(), self.geom.c_out, self.geom.c_in, self.geom.k)
            }
            BlockWeight::Lora(l) => Ok(l.merge()),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: NodeId, cond: NodeId) -> Result<NodeId> {
        let bias = tape.param(&self.bias);
        let h = match &self.weight {
            BlockWeight::Plain(w) => {
                let wn = tape.param(w);
                tape.conv1d(x, wn, Some(bias), self.geom.stride, self.geom.padding)?
            }
            BlockWeight::Factored(f) => {
                let wn = f.conv_weight_node(tape, &self.geom)?;
                tape.conv1d(x, wn, Some(bias), self.geom.stride, self.geom.padding)?
            }
            BlockWeight::Lora(l) => l.forward(tape, x, Some(bias))?,
        };
        let fw = tape.param(&self.film_w);
        let fb = tape.param(&self.film_b);
        let film = tape.linear(cond, fw, fb)?;
        let (scale, shift) = tape.split_half_cols(film)?;
        let h = tape.film(h, scale, shift)?;
        Ok(tape.silu(h))
    }

    pub fn params(&self) -> Vec<ParamRef> {
        let mut out = match &self.weight {
            BlockWeight::Plain(w) => vec![w.clone()],
            BlockWeight::Factored(f) => f.all_params(),
            BlockWeight::Lora(l) => l.all_params(),
        };
        out.push(self.bias.clone());
        out.push(self.film_w.clone());
        out.push(self.film_b.clone());
        out
    }

    /// Per-sample analytic forward FLOPs at the given input length.
    pub fn forward_flops(&self, l_in: usize) -> u64 {
        match &self.weight {
            BlockWeight::Plain(_) => conv1d_flops(&self.geom, l_in, true),
            BlockWeight::Factored(_) => factored_forward_flops(&self.geom, l_in, true),
            BlockWeight::Lora(l) => lora_forward_flops(&self.geom, l_in, l.r, true),
        }
    }

    pub fn trainable_weight_param_count(&self) -> usize {
        match &self.weight {
            BlockWeight::Plain(_) => self.geom.c_out * self.geom.c_in * self.geom.k,
            BlockWeight::Factored(f) => f.trainable_param_count(),
            BlockWeight::Lora(l) => l.trainable_param_count(),
        }
    }
}

/// Serializable snapshot of a policy network.
#[derive(Clone, Debug)]
pub struct NetState {
    pub mode: BlockMode,
    /// Per mode-pluggable block: trainable rank (factored/lora) or 0 (plain).
    pub block_ranks: Vec<usize>,
    pub params: Vec<(String, Array)>,
    pub normalizer: ActionNormalizer,
}

/// Conditional noise-prediction U-Net over action horizons.
pub struct PolicyNet {
    pub cfg: NetConfig,
    /// Mode-pluggable blocks: enc0, enc1, bot0, bot1, mid, dec0, dec1.
    blocks: Vec<ConvBlock>,
    down_w: ParamRef,
    down_b: ParamRef,
    head_w: ParamRef,
    head_b: ParamRef,
    time_w1: ParamRef,
    time_b1: ParamRef,
    time_w2: ParamRef,
    time_b2: ParamRef,
    obs_w1: ParamRef,
    obs_b1: ParamRef,
    obs_w2: ParamRef,
    obs_b2: ParamRef,
    normalizer: ActionNormalizer,
}

impl PolicyNet {
    /// Fresh network; factored mode starts at full rank per layer, lora mode
    /// injects adapters at `cfg.lora_r`.
    pub fn new<R: Rng>(cfg: NetConfig, rng: &mut R) -> Result<Self> {
        if cfg.horizon % 2 != 0 {
            return Err(DriftError::Config("horizon must be even".into()));
        }
        let (c1, c2) = cfg.channels;
        let a = cfg.action_dim;
        let cond = cfg.cond_dim();
        let blocks = vec![
            ConvBlock::new("enc0", ConvGeometry::new(c1, a, 3, 1, 1), cond, rng),
            ConvBlock::new("enc1", ConvGeometry::new(c1, c1, 3, 1, 1), cond, rng),
            ConvBlock::new("bot0", ConvGeometry::new(c2, c1, 3, 1, 1), cond, rng),
            ConvBlock::new("bot1", ConvGeometry::new(c2, c2, 3, 1, 1), cond, rng),
            ConvBlock::new("mid", ConvGeometry::new(c2, c2, 3, 1, 1), cond, rng),
            ConvBlock::new("dec0", ConvGeometry::new(c1, c1 + c2, 3, 1, 1), cond, rng),
            ConvBlock::new("dec1", ConvGeometry::new(c1, c1, 3, 1, 1), cond, rng),
        ];
        let lin = |rng: &mut R, name: &str, out_d: usize, in_d: usize, zero: bool| {
            let w = if zero {
                Array::zeros(&[out_d, in_d])
            } else {
                Array::randn(&[out_d, in_d], rng).scale((1.0 / in_d as f64).sqrt())
            };
            Parameter::new(name.to_string(), w, true)
        };
        let e = cfg.emb_dim;
        let mut net = PolicyNet {
            down_w: Parameter::new(
                "down.w",
                Array::randn(&[c1, c1, 3], rng).scale((1.0 / (c1 * 3) as f64).sqrt()),
                true,
            ),
            down_b: Parameter::new("down.bias", Array::zeros(&[c1]), true),
            // Zero-initialized head: the untrained net predicts zero noise.
            head_w: Parameter::new("head.w", Array::zeros(&[a, c1, 1]), true),
            head_b: Parameter::new("head.bias", Array::zeros(&[a]), true),
            time_w1: lin(rng, "time.w1", e, e, false),
            time_b1: Parameter::new("time.b1", Array::zeros(&[e]), true),
            time_w2: lin(rng, "time.w2", e, e, false),
            time_b2: Parameter::new("time.b2", Array::zeros(&[e]), true),
            obs_w1: lin(rng, "obs.w1", e, cfg.obs_flat_dim(), false),
            obs_b1: Parameter::new("obs.b1", Array::zeros(&[e]), true),
            obs_w2: lin(rng, "obs.w2", e, e, false),
            obs_b2: Parameter::new("obs.b2", Array::zeros(&[e]), true),
            blocks,
            normalizer: ActionNormalizer::identity(cfg.action_dim),
            cfg,
        };
        match net.cfg.mode {
            BlockMode::Plain => {}
            BlockMode::Factored => net.factorize_full_rank()?,
            BlockMode::Lora => {
                let r = net.cfg.lora_r;
                let alpha = net.cfg.lora_alpha;
                net.adapt_lora(r, alpha, rng)?;
            }
        }
        Ok(net)
    }

    fn factorize_full_rank(&mut self) -> Result<()> {
        for b in &mut self.blocks {
            let w = match &b.weight {
                BlockWeight::Plain(w) => w.borrow().value.clone(),
                _ => return Err(DriftError::Contract("already factored".into())),
            };
            let mat = reshape_conv_to_matrix(&w)?;
            let p = b.geom.layer_r_max();
            b.weight = BlockWeight::Factored(svd_partition(&mat, p, b.name())?);
        }
        Ok(())
    }

    /// Replace every block weight by a frozen copy of its current effective
    /// kernel plus a fresh rank-r adapter.
    pub fn adapt_lora<R: Rng>(&mut self, r: usize, alpha: f64, rng: &mut R) -> Result<()> {
        for b in &mut self.blocks {
            let kernel = b.effective_kernel()?;
            b.weight = BlockWeight::Lora(LoraConv::adapt(kernel, b.geom, r, alpha, b.name(), rng));
        }
        self.cfg.mode = BlockMode::Lora;
        Ok(())
    }

    pub fn mode(&self) -> BlockMode {
        self.cfg.mode
    }

    pub fn blocks(&self) -> &[ConvBlock] {
        &self.blocks
    }

    pub fn normalizer(&self) -> &ActionNormalizer {
        &self.normalizer
    }

    pub fn set_normalizer(&mut self, n: ActionNormalizer) {
        self.normalizer = n;
    }

    /// Apply the scheduled rank to every block, clamped per layer. Factored
    /// blocks re-partition; LoRA blocks merge-and-reinject. Contract error in
    /// plain mode.
    pub fn set_rank<R: Rng>(&mut self, r: usize, rng: &mut R) -> Result<()> {
        match self.cfg.mode {
            BlockMode::Plain => Err(DriftError::Contract(
                "set_rank called on a plain-mode network".into(),
            )),
            BlockMode::Factored => {
                for b in &mut self.blocks {
                    if let BlockWeight::Factored(f) = &mut b.weight {
                        f.set_trainable_rank(r.clamp(1, b.geom.layer_r_max()))?;
                    }
                }
                Ok(())
            }
            BlockMode::Lora => {
                for b in &mut self.blocks {
                    if let BlockWeight::Lora(l) = &mut b.weight {
                        let r_eff = r.clamp(1, b.geom.layer_r_max());
                        if r_eff != l.r {
                            l.merge_and_reinject(r_eff, rng);
                        }
                    }
                }
                Ok(())
            }
        }
    }

    /// Set each block's rank to its own `p / div` (at least 1); the per-layer
    /// analogue of [`set_rank`](Self::set_rank) for fraction-of-full sweeps.
    pub fn set_rank_div<R: Rng>(&mut self, div: usize, rng: &mut R) -> Result<()> {
        if self.cfg.mode == BlockMode::Plain {
            return Err(DriftError::Contract(
                "set_rank_div called on a plain-mode network".into(),
            ));
        }
        for b in &mut self.blocks {
            let r = (b.geom.layer_r_max() / div.max(1)).max(1);
            match &mut b.weight {
                BlockWeight::Factored(f) => f.set_trainable_rank(r)?,
                BlockWeight::Lora(l) => {
                    if r != l.r {
                        l.merge_and_reinject(r, rng);
                    }
                }
                BlockWeight::Plain(_) => unreachable!(),
            }
        }
        Ok(())
    }

    /// Current trainable rank of each mode-pluggable block (0 in plain mode).
    pub fn block_ranks(&self) -> Vec<usize> {
        self.blocks
            .iter()
            .map(|b| match &b.weight {
                BlockWeight::Plain(_) => 0,
                BlockWeight::Factored(f) => f.r,
                BlockWeight::Lora(l) => l.r,
            })
            .collect()
    }

    pub fn parameters(&self) -> Vec<ParamRef> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.extend(b.params());
        }
        out.extend([
            self.down_w.clone(),
            self.down_b.clone(),
            self.head_w.clone(),
            self.head_b.clone(),
            self.time_w1.clone(),
            self.time_b1.clone(),
            self.time_w2.clone(),
            self.time_b2.clone(),
            self.obs_w1.clone(),
            self.obs_b1.clone(),
            self.obs_w2.clone(),
            self.obs_b2.clone(),
        ]);
        out
    }

    fn sinusoidal_embedding(&self, ts: &[usize]) -> Array {
        let e = self.cfg.emb_dim;
        let half = e / 2;
        let mut out = Array::zeros(&[ts.len(), e]);
        for (bi, &t) in ts.iter().enumerate() {
            for i in 0..half {
                let freq = (-(10_000.0_f64).ln() * i as f64 / (half - 1).max(1) as f64).exp();
                let v = t as f64 * freq;
                out.set2(bi, i, v.sin());
                out.set2(bi, half + i, v.cos());
            }
        }
        out
    }

    fn mlp2(
        &self,
        tape: &mut Tape,
        x: NodeId,
        w1: &ParamRef,
        b1: &ParamRef,
        w2: &ParamRef,
        b2: &ParamRef,
    ) -> Result<NodeId> {
        let w1n = tape.param(w1);
        let b1n = tape.param(b1);
        let h = tape.linear(x, w1n, b1n)?;
        let h = tape.silu(h);
        let w2n = tape.param(w2);
        let b2n = tape.param(b2);
        tape.linear(h, w2n, b2n)
    }

    /// Predict the noise in `x_noisy` (B x A x H) at per-sample timesteps,
    /// conditioned on flattened observations (B x O*obs_dim).
    pub fn forward(
        &self,
        tape: &mut Tape,
        x_noisy: &Array,
        ts: &[usize],
        obs: &Array,
    ) -> Result<NodeId> {
        let b = x_noisy.shape()[0];
        if ts.len() != b || obs.shape() != [b, self.cfg.obs_flat_dim()] {
            return Err(DriftError::Dimension(format!(
                "forward: batch {} vs ts {} / obs {:?}",
                b,
                ts.len(),
                obs.shape()
            )));
        }
        let e = self.cfg.emb_dim;
        let temb_in = tape.constant(self.sinusoidal_embedding(ts));
        let temb = self.mlp2(tape, temb_in, &self.time_w1, &self.time_b1, &self.time_w2, &self.time_b2)?;
        let obs_in = tape.constant(obs.clone());
        let oemb = self.mlp2(tape, obs_in, &self.obs_w1, &self.obs_b1, &self.obs_w2, &self.obs_b2)?;
        // Concatenate the two embeddings along features.
        let t3 = tape.reshape(temb, &[b, e, 1])?;
        let o3 = tape.reshape(oemb, &[b, e, 1])?;
        let cond3 = tape.concat_channels(t3, o3)?;
        let cond = tape.reshape(cond3, &[b, 2 * e])?;

        let x = tape.constant(x_noisy.clone());
        let h = self.blocks[0].forward(tape, x, cond)?; // enc0
        let skip = self.blocks[1].forward(tape, h, cond)?; // enc1
        let dw = tape.param(&self.down_w);
        let db = tape.param(&self.down_b);
        let down = tape.conv1d(skip, dw, Some(db), 2, 1)?;
        let h = self.blocks[2].forward(tape, down, cond)?; // bot0
        let h = self.blocks[3].forward(tape, h, cond)?; // bot1
        let h = self.blocks[4].forward(tape, h, cond)?; // mid
        let up = tape.upsample2(h)?;
        let cat = tape.concat_channels(skip, up)?;
        let h = self.blocks[5].forward(tape, cat, cond)?; // dec0
        let h = self.blocks[6].forward(tape, h, cond)?; // dec1
        let hw = tape.param(&self.head_w);
        let hb = tape.param(&self.head_b);
        tape.conv1d(h, hw, Some(hb), 1, 0)
    }

    /// Per-sample analytic forward FLOPs of the conv stack (mode-dependent).
    pub fn forward_flops(&self) -> u64 {
        let h = self.cfg.horizon;
        let half = h / 2;
        let ls = [h, h, half, half, half, h, h];
        self.blocks
            .iter()
            .zip(ls)
            .map(|(b, l)| b.forward_flops(l))
            .sum::<u64>()
            + conv1d_flops(&ConvGeometry::new(self.cfg.channels.0, self.cfg.channels.0, 3, 2, 1), h, true)
            + conv1d_flops(&ConvGeometry::new(self.cfg.action_dim, self.cfg.channels.0, 1, 1, 0), h, true)
    }

    /// Trainable scalar count across all mode-pluggable block weights.
    pub fn trainable_weight_param_count(&self) -> usize {
        self.blocks.iter().map(|b| b.trainable_weight_param_count()).sum()
    }

    pub fn to_state(&self) -> NetState {
        let mut params: Vec<(String, Array)> = self
            .parameters()
            .iter()
            .map(|p| {
                let p = p.borrow();
                (p.name.clone(), p.value.clone())
            })
            .collect();
        params.sort_by(|a, b| a.0.cmp(&b.0));
        NetState {
            mode: self.cfg.mode,
            block_ranks: self.block_ranks(),
            params,
            normalizer: self.normalizer.clone(),
        }
    }

    /// Rebuild a network from a snapshot. The architecture config must match
    /// the one the snapshot was taken from.
    pub fn from_state(mut cfg: NetConfig, state: &NetState) -> Result<Self> {
        cfg.mode = BlockMode::Plain;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        use rand::SeedableRng;
        let mut net = PolicyNet::new(cfg, &mut rng)?;
        match state.mode {
            BlockMode::Plain => {}
            BlockMode::Factored => {
                net.factorize_full_rank()?;
                for (b, &r) in net.blocks.iter_mut().zip(&state.block_ranks) {
                    if let BlockWeight::Factored(f) = &mut b.weight {
                        f.repartition(r)?;
                    }
                }
            }
            BlockMode::Lora => {
                net.adapt_lora(1, net.cfg.lora_alpha, &mut rng)?;
                for (b, &r) in net.blocks.iter_mut().zip(&state.block_ranks) {
                    if let BlockWeight::Lora(l) = &mut b.weight {
                        l.merge_and_reinject(r, &mut rng);
                    }
                }
            }
        }
        net.cfg.mode = state.mode;
        net.load_param_values(&state.params)?;
        net.normalizer = state.normalizer.clone();
        Ok(net)
    }

    pub fn load_param_values(&mut self, values: &[(String, Array)]) -> Result<()> {
        let params = self.parameters();
        let mut by_name: std::collections::BTreeMap<String, ParamRef> = params
            .into_iter()
            .map(|p| {
                let name = p.borrow().name.clone();
                (name, p)
            })
            .collect();
        for (name, value) in values {
            let p = by_name.remove(name).ok_or_else(|| {
                DriftError::Checkpoint(format!("unknown parameter {name:?} in state"))
            })?;
            let mut p = p.borrow_mut();
            if p.value.shape() != value.shape() {
                return Err(DriftError::Checkpoint(format!(
                    "shape mismatch for {name:?}: {:?} vs {:?}",
                    p.value.shape(),
                    value.shape()
                )));
            }
            p.value = value.clone();
            p.grad = Array::zeros(value.shape());
        }
        if !by_name.is_empty() {
            return Err(DriftError::Checkpoint(format!(
                "state missing {} parameters (first: {:?})",
                by_name.len(),
                by_name.keys().next()
            )));
        }
        for b in &mut self.blocks {
            if let BlockWeight::Factored(f) = &mut b.weight {
                f.refresh_frozen_cache();
            }
        }
        Ok(())
    }
}
