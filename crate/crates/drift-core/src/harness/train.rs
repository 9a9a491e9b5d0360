//! BC, HG-DAgger, and DRIFT-DAgger training drivers.
//!
//! All randomness is derived from the session seed via (purpose, index)
//! hashing, so a run interrupted at any epoch boundary and resumed from a
//! snapshot replays the exact same stream of updates.

use std::collections::VecDeque;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::{
    ddpm_loss, sample_actions, ActionNormalizer, BlockMode, NetConfig, NetState, NoiseSchedule,
    PolicyNet,
};
use crate::harness::{
    compute_gate_threshold, derive_rng, Dataset, Environment, EpochLog, EvalLog, ExpertGate,
    Metrics, Phase, Step, Trajectory,
};
use crate::numerics::{Adam, Array};
use crate::schedule::{RankSchedule, ScheduleSpan};
use crate::DriftError;
use crate::Result;

pub type ExpertFn<'a> = &'a (dyn Fn(&[f64]) -> Vec<f64> + Sync);

/// Phase strategy of a DAgger session.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Rank modulation with the configured scheduler; the reference method.
    DriftRm,
    /// LoRA adapters at a fixed rank throughout.
    DriftLoraStatic,
    /// LoRA adapters driven by the rank scheduler via merge-and-reinject.
    DriftLoraSched,
    /// Expert-gated DAgger at permanent full rank.
    HgFull,
    /// Full rank offline, static reduced rank online.
    Fpmo,
    /// Rank modulation offline, LoRA adapters online.
    Mplo,
    /// Behavior cloning with full expert relabeling each online iteration.
    Bc,
}

impl Strategy {
    /// Net mode the strategy starts in.
    pub fn initial_mode(self) -> BlockMode {
        match self {
            Strategy::DriftLoraStatic | Strategy::DriftLoraSched => BlockMode::Lora,
            Strategy::Bc => BlockMode::Plain,
            _ => BlockMode::Factored,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::DriftRm => "drift_rm",
            Strategy::DriftLoraStatic => "drift_lora_static",
            Strategy::DriftLoraSched => "drift_lora_sched",
            Strategy::HgFull => "hg_full",
            Strategy::Fpmo => "fpmo",
            Strategy::Mplo => "mplo",
            Strategy::Bc => "bc",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateConfig {
    /// Resolve from expert data: mean consecutive-action cosine similarity.
    Auto,
    Fixed(f64),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub strategy: Strategy,
    pub net: NetConfig,
    pub schedule: RankSchedule,
    pub offline_epochs: u32,
    pub online_iters: u32,
    pub offline_rollouts: usize,
    pub eval_rollouts: usize,
    /// Evaluate every this many online iterations (and at the end).
    pub checkpoint_every: u32,
    pub batch: usize,
    pub lr: f64,
    pub t_diff: usize,
    pub beta_start: f64,
    /// Final beta; scale up when shrinking `t_diff` so the terminal
    /// `alpha_bar` stays small (the chain must end near pure noise).
    pub beta_end: f64,
    pub seed: u64,
    pub gate: GateConfig,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig::default_desk(Strategy::DriftRm, 6)
    }
}

impl SessionConfig {
    /// Desk-scale defaults for a given observation dimensionality.
    pub fn default_desk(strategy: Strategy, obs_dim: usize) -> Self {
        let mut net = NetConfig::default_toy(obs_dim);
        net.mode = strategy.initial_mode();
        let schedule = RankSchedule::new(crate::schedule::DecayKind::Sigmoid, 96, 8, 30)
            .unwrap()
            .with_tau(0.5);
        SessionConfig {
            strategy,
            net,
            schedule,
            offline_epochs: 30,
            online_iters: 20,
            offline_rollouts: 50,
            eval_rollouts: 50,
            checkpoint_every: 5,
            batch: 32,
            lr: 1e-4,
            t_diff: 100,
            beta_start: 1e-4,
            beta_end: 2e-2,
            seed: 0,
            gate: GateConfig::Auto,
        }
    }

    pub fn noise_schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.t_diff, self.beta_start, self.beta_end)
    }

    fn validate(&self) -> Result<()> {
        if self.net.mode != self.strategy.initial_mode() {
            return Err(DriftError::Config(format!(
                "strategy {} requires net mode {:?}, got {:?}",
                self.strategy.as_str(),
                self.strategy.initial_mode(),
                self.net.mode
            )));
        }
        if self.batch == 0 {
            return Err(DriftError::Config("batch must be positive".into()));
        }
        Ok(())
    }
}

/// One full expert-controlled episode, fully labeled.
pub fn expert_rollout<E: Environment>(env: &mut E, expert: ExpertFn, seed: u64) -> Trajectory {
    let mut obs = env.reset(seed);
    let mut steps = Vec::new();
    loop {
        let a = expert(&obs);
        let out = env.step(&a);
        steps.push(Step {
            obs,
            action: a,
            expert_label: true,
        });
        obs = out.obs;
        if out.done {
            return Trajectory {
                steps,
                success: out.success,
            };
        }
    }
}

/// Offline bootstrap dataset: n expert rollouts, deterministic per seed.
pub fn collect_offline<E: Environment>(
    env: &mut E,
    expert: ExpertFn,
    n_rollouts: usize,
    seed: u64,
) -> Dataset {
    let mut ds = Dataset::new();
    for e in 0..n_rollouts {
        let env_seed = derive_rng(seed, "offline_ep", e as u64).gen::<u64>();
        ds.push(expert_rollout(env, expert, env_seed));
    }
    ds
}

#[derive(Clone, Copy, Debug)]
pub struct EpochStats {
    pub mean_loss: f64,
    pub n_batches: usize,
    pub train_time_s: f64,
}

/// One shuffled pass of DDPM-loss minibatches over the dataset's labeled
/// windows.
pub fn train_one_epoch<R: Rng>(
    net: &PolicyNet,
    opt: &mut Adam,
    ds: &Dataset,
    noise: &NoiseSchedule,
    batch: usize,
    rng: &mut R,
) -> Result<EpochStats> {
    let mut anchors = ds.anchors();
    anchors.shuffle(rng);
    let params = net.parameters();
    let (mut loss_sum, mut time, mut nb) = (0.0, 0.0, 0usize);
    for chunk in anchors.chunks(batch.max(1)) {
        let (obs, act) = ds.batch(chunk, net.cfg.obs_horizon, net.cfg.horizon, net.normalizer());
        let t0 = Instant::now();
        let (mut tape, loss) = ddpm_loss(net, &act, &obs, noise, rng)?;
        opt.zero_grad(&params);
        tape.backward(loss)?;
        opt.step(&params);
        time += t0.elapsed().as_secs_f64();
        loss_sum += tape.value(loss).data()[0];
        nb += 1;
    }
    Ok(EpochStats {
        mean_loss: if nb > 0 { loss_sum / nb as f64 } else { 0.0 },
        n_batches: nb,
        train_time_s: time,
    })
}

/// Supervised training for a fixed number of epochs; the BC primitive.
pub fn bc_train<R: Rng>(
    net: &PolicyNet,
    opt: &mut Adam,
    ds: &Dataset,
    noise: &NoiseSchedule,
    batch: usize,
    epochs: u32,
    rng: &mut R,
) -> Result<Vec<EpochStats>> {
    let mut out = Vec::with_capacity(epochs as usize);
    for _ in 0..epochs {
        out.push(train_one_epoch(net, opt, ds, noise, batch, rng)?);
    }
    Ok(out)
}

pub enum RolloutMode<'a> {
    /// Expert takes over (and labels) steps where the gate triggers.
    Gated(&'a ExpertGate),
    /// Learner drives; every step is relabeled with the expert action.
    Relabel,
    /// Learner drives; nothing is labeled (evaluation).
    Plain,
}

/// Run one learner episode with receding-horizon execution: half the sampled
/// action horizon is consumed before replanning, and an intervention discards
/// the remaining plan.
pub fn policy_rollout<E: Environment, R: Rng>(
    env: &mut E,
    net: &PolicyNet,
    expert: Option<ExpertFn>,
    mode: RolloutMode,
    noise: &NoiseSchedule,
    rng: &mut R,
) -> Result<(Trajectory, usize)> {
    let env_seed = rng.gen::<u64>();
    let mut obs = env.reset(env_seed);
    let mut hist: Vec<Vec<f64>> = vec![obs.clone()];
    let o = net.cfg.obs_horizon;
    let exec = (net.cfg.horizon / 2).max(1);
    let mut plan: VecDeque<Vec<f64>> = VecDeque::new();
    let mut steps = Vec::new();
    let mut labels = 0usize;
    let success;
    loop {
        if plan.is_empty() {
            let flat = obs_window_flat(&hist, o);
            let plan_arr = sample_actions(net, &flat, noise, rng)?;
            for j in 0..exec {
                plan.push_back((0..net.cfg.action_dim).map(|d| plan_arr.at2(d, j)).collect());
            }
        }
        let learner_a = plan.pop_front().unwrap();
        let (exec_a, store_a, label) = match &mode {
            RolloutMode::Plain => (learner_a.clone(), learner_a, false),
            RolloutMode::Relabel => {
                let ea = expert.expect("relabel rollout needs an expert")(&obs);
                (learner_a, ea, true)
            }
            RolloutMode::Gated(g) => {
                let ea = expert.expect("gated rollout needs an expert")(&obs);
                if g.intervene(&learner_a, &ea) {
                    plan.clear();
                    (ea.clone(), ea, true)
                } else {
                    (learner_a.clone(), learner_a, false)
                }
            }
        };
        if label {
            labels += 1;
        }
        steps.push(Step {
            obs: obs.clone(),
            action: store_a,
            expert_label: label,
        });
        let out = env.step(&exec_a);
        obs = out.obs;
        hist.push(obs.clone());
        if out.done {
            success = out.success;
            break;
        }
    }
    Ok((Trajectory { steps, success }, labels))
}

fn obs_window_flat(hist: &[Vec<f64>], o: usize) -> Vec<f64> {
    let n = hist.len();
    let mut out = Vec::with_capacity(o * hist[0].len());
    for h in 0..o {
        let idx = (n + h).saturating_sub(o).min(n - 1);
        out.extend_from_slice(&hist[idx]);
    }
    out
}

/// Evaluate a policy snapshot over the given episode seeds, in parallel.
pub fn evaluate<E: Environment + Clone + Send + Sync>(
    net_cfg: &NetConfig,
    state: &NetState,
    env: &E,
    seeds: &[u64],
    noise: &NoiseSchedule,
) -> Result<Metrics> {
    let results: Result<Vec<(bool, usize)>> = seeds
        .par_iter()
        .map(|&s| {
            let mut env = env.clone();
            let net = PolicyNet::from_state(net_cfg.clone(), state)?;
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let (traj, _) = policy_rollout(&mut env, &net, None, RolloutMode::Plain, noise, &mut rng)?;
            Ok((traj.success, traj.steps.len()))
        })
        .collect();
    Ok(Metrics::from_episodes(&results?))
}

/// Serializable snapshot of a session at an epoch/iteration boundary.
#[derive(Clone)]
pub struct SessionState {
    pub net_state: NetState,
    pub opt_state: Vec<(String, Array, Array, u64)>,
    pub dataset: Dataset,
    pub offline_done: u32,
    pub online_done: u32,
    pub nel: u64,
    pub gate_threshold: f64,
}

/// Final results of a driver run.
pub struct SessionOutcome {
    pub cfg: SessionConfig,
    pub net_cfg: NetConfig,
    pub net_state: NetState,
    pub logs: Vec<EpochLog>,
    pub evals: Vec<EvalLog>,
    pub nel: u64,
    pub gate_threshold: f64,
}

/// Interactive imitation session implementing the offline-bootstrap /
/// gated-online protocol for all phase strategies.
pub struct DaggerSession<'e, E: Environment + Clone + Send + Sync> {
    pub cfg: SessionConfig,
    env: E,
    expert: ExpertFn<'e>,
    net: PolicyNet,
    opt: Adam,
    pub dataset: Dataset,
    pub logs: Vec<EpochLog>,
    pub evals: Vec<EvalLog>,
    pub nel: u64,
    pub gate: ExpertGate,
    noise: NoiseSchedule,
    offline_done: u32,
    online_done: u32,
}

impl<'e, E: Environment + Clone + Send + Sync> DaggerSession<'e, E> {
    /// Bootstrap a fresh session: collect the offline dataset, fit the action
    /// normalizer, and resolve the gate threshold.
    pub fn new(mut env: E, expert: ExpertFn<'e>, cfg: SessionConfig) -> Result<Self> {
        cfg.validate()?;
        let mut net_cfg = cfg.net.clone();
        if cfg.strategy == Strategy::DriftLoraStatic {
            net_cfg.lora_r = cfg.schedule.r_min as usize;
        } else if cfg.strategy == Strategy::DriftLoraSched {
            net_cfg.lora_r = cfg.schedule.r_max as usize;
        }
        let mut net_rng = derive_rng(cfg.seed, "net_init", 0);
        let mut net = PolicyNet::new(net_cfg, &mut net_rng)?;
        let dataset = collect_offline(&mut env, expert, cfg.offline_rollouts, cfg.seed);
        if !dataset.is_empty() {
            net.set_normalizer(ActionNormalizer::fit(
                &dataset.labeled_actions(),
                cfg.net.action_dim,
            ));
        }
        let threshold = match cfg.gate {
            GateConfig::Auto => compute_gate_threshold(&dataset)?,
            GateConfig::Fixed(v) => v,
        };
        let noise = cfg.noise_schedule()?;
        let nel = dataset.label_count() as u64;
        let opt = Adam::new(cfg.lr);
        Ok(DaggerSession {
            env,
            expert,
            net,
            opt,
            dataset,
            logs: Vec::new(),
            evals: Vec::new(),
            nel,
            gate: ExpertGate::new(threshold),
            noise,
            offline_done: 0,
            online_done: 0,
            cfg,
        })
    }

    /// Restore a session from a snapshot; continues bitwise-identically to the
    /// uninterrupted run.
    pub fn from_state(env: E, expert: ExpertFn<'e>, cfg: SessionConfig, state: &SessionState) -> Result<Self> {
        let net = PolicyNet::from_state(cfg.net.clone(), &state.net_state)?;
        let mut opt = Adam::new(cfg.lr);
        opt.import_state(state.opt_state.clone());
        let noise = cfg.noise_schedule()?;
        Ok(DaggerSession {
            env,
            expert,
            net,
            opt,
            dataset: state.dataset.clone(),
            logs: Vec::new(),
            evals: Vec::new(),
            nel: state.nel,
            gate: ExpertGate::new(state.gate_threshold),
            noise,
            offline_done: state.offline_done,
            online_done: state.online_done,
            cfg,
        })
    }

    pub fn to_state(&self) -> SessionState {
        SessionState {
            net_state: self.net.to_state(),
            opt_state: self.opt.export_state(),
            dataset: self.dataset.clone(),
            offline_done: self.offline_done,
            online_done: self.online_done,
            nel: self.nel,
            gate_threshold: self.gate.threshold,
        }
    }

    pub fn net(&self) -> &PolicyNet {
        &self.net
    }

    pub fn progress(&self) -> (u32, u32) {
        (self.offline_done, self.online_done)
    }

    /// Scheduled rank for offline epoch i; None means no rank machinery.
    fn offline_rank(&self, i: u32) -> Option<usize> {
        match self.cfg.strategy {
            Strategy::Bc => None,
            Strategy::Fpmo | Strategy::HgFull => Some(self.cfg.schedule.r_max as usize),
            Strategy::DriftLoraStatic => Some(self.cfg.schedule.r_min as usize),
            Strategy::DriftRm | Strategy::DriftLoraSched | Strategy::Mplo => {
                Some(self.cfg.schedule.rank_at(i) as usize)
            }
        }
    }

    fn online_rank(&self, j: u32) -> Option<usize> {
        match self.cfg.strategy {
            Strategy::Bc => None,
            Strategy::HgFull => Some(self.cfg.schedule.r_max as usize),
            Strategy::Fpmo | Strategy::DriftLoraStatic | Strategy::Mplo => {
                Some(self.cfg.schedule.r_min as usize)
            }
            Strategy::DriftRm | Strategy::DriftLoraSched => match self.cfg.schedule.span {
                ScheduleSpan::Combined => {
                    Some(self.cfg.schedule.rank_at(self.cfg.offline_epochs + j) as usize)
                }
                ScheduleSpan::Offline => Some(self.cfg.schedule.r_min as usize),
            },
        }
    }

    pub fn run_offline_epoch(&mut self) -> Result<()> {
        let i = self.offline_done;
        let rank = self.offline_rank(i);
        if let Some(r) = rank {
            let mut rrng = derive_rng(self.cfg.seed, "rank", i as u64);
            self.net.set_rank(r, &mut rrng)?;
        }
        let mut trng = derive_rng(self.cfg.seed, "train", i as u64);
        let stats = train_one_epoch(
            &self.net,
            &mut self.opt,
            &self.dataset,
            &self.noise,
            self.cfg.batch,
            &mut trng,
        )?;
        self.logs.push(EpochLog {
            phase: Phase::Offline,
            epoch: i,
            rank: rank.unwrap_or(0),
            mode: self.net.mode(),
            n_batches: stats.n_batches,
            train_time_s: stats.train_time_s,
            loss: stats.mean_loss,
            nel: self.nel,
        });
        self.offline_done += 1;
        Ok(())
    }

    /// One-time transition applied before the first online iteration:
    /// strategies without an online scheduler reduce to their online rank
    /// here; mplo swaps the factored blocks for LoRA adapters.
    fn pre_online(&mut self) -> Result<()> {
        match self.cfg.strategy {
            Strategy::Fpmo => {
                let mut rrng = derive_rng(self.cfg.seed, "rank_online", 0);
                self.net.set_rank(self.cfg.schedule.r_min as usize, &mut rrng)?;
            }
            Strategy::Mplo => {
                let mut rrng = derive_rng(self.cfg.seed, "mplo_adapt", 0);
                let alpha = self.cfg.net.lora_alpha;
                self.net
                    .adapt_lora((self.cfg.schedule.r_min as usize).max(1), alpha, &mut rrng)?;
            }
            _ => {}
        }
        Ok(())
    }

    fn eval_seeds(&self, iteration: u32) -> Vec<u64> {
        let mut r = derive_rng(self.cfg.seed, "eval", iteration as u64);
        (0..self.cfg.eval_rollouts).map(|_| r.gen()).collect()
    }

    pub fn eval_checkpoint(&mut self, iteration: u32) -> Result<()> {
        let seeds = self.eval_seeds(iteration);
        let m = evaluate(&self.net.cfg, &self.net.to_state(), &self.env, &seeds, &self.noise)?;
        self.evals.push(EvalLog {
            iteration,
            sr: m.sr,
            msd_mean: m.msd_mean,
            msd_std: m.msd_std,
            nel: self.nel,
        });
        Ok(())
    }

    pub fn run_online_iter(&mut self) -> Result<()> {
        let j = self.online_done;
        if j == 0 {
            self.pre_online()?;
            self.eval_checkpoint(0)?;
        }
        let global = self.cfg.offline_epochs + j;
        let rank = self.online_rank(j);
        if let Some(r) = rank {
            let mut rrng = derive_rng(self.cfg.seed, "rank", global as u64);
            self.net.set_rank(r, &mut rrng)?;
        }
        let mut roll_rng = derive_rng(self.cfg.seed, "rollout", j as u64);
        let gate = self.gate;
        let mode = match self.cfg.strategy {
            Strategy::Bc => RolloutMode::Relabel,
            _ => RolloutMode::Gated(&gate),
        };
        let (traj, labels) = policy_rollout(
            &mut self.env,
            &self.net,
            Some(self.expert),
            mode,
            &self.noise,
            &mut roll_rng,
        )?;
        self.nel += labels as u64;
        self.dataset.push(traj);
        let mut trng = derive_rng(self.cfg.seed, "train", global as u64);
        let stats = train_one_epoch(
            &self.net,
            &mut self.opt,
            &self.dataset,
            &self.noise,
            self.cfg.batch,
            &mut trng,
        )?;
        self.logs.push(EpochLog {
            phase: Phase::Online,
            epoch: global,
            rank: rank.unwrap_or(0),
            mode: self.net.mode(),
            n_batches: stats.n_batches,
            train_time_s: stats.train_time_s,
            loss: stats.mean_loss,
            nel: self.nel,
        });
        self.online_done += 1;
        if self.online_done % self.cfg.checkpoint_every.max(1) == 0
            || self.online_done == self.cfg.online_iters
        {
            self.eval_checkpoint(self.online_done)?;
        }
        Ok(())
    }

    /// Run the remaining epochs and iterations to completion.
    pub fn run(&mut self) -> Result<()> {
        while self.offline_done < self.cfg.offline_epochs {
            self.run_offline_epoch()?;
        }
        if self.cfg.online_iters == 0 && self.evals.is_empty() {
            self.eval_checkpoint(0)?;
        }
        while self.online_done < self.cfg.online_iters {
            self.run_online_iter()?;
        }
        Ok(())
    }

    pub fn outcome(self) -> SessionOutcome {
        SessionOutcome {
            net_cfg: self.net.cfg.clone(),
            net_state: self.net.to_state(),
            logs: self.logs,
            evals: self.evals,
            nel: self.nel,
            gate_threshold: self.gate.threshold,
            cfg: self.cfg,
        }
    }
}

/// Run a full session for the configured strategy.
pub fn drift_dagger<'e, E: Environment + Clone + Send + Sync>(
    env: E,
    expert: ExpertFn<'e>,
    cfg: SessionConfig,
) -> Result<DaggerSession<'e, E>> {
    let mut s = DaggerSession::new(env, expert, cfg)?;
    s.run()?;
    Ok(s)
}

/// Dedicated HG-DAgger driver: expert-gated DAgger at permanent full rank,
/// with no rank machinery anywhere in the loop.
pub fn hg_dagger<E: Environment + Clone + Send + Sync>(
    mut env: E,
    expert: ExpertFn,
    cfg: SessionConfig,
) -> Result<SessionOutcome> {
    if cfg.strategy != Strategy::HgFull {
        return Err(DriftError::Config("hg_dagger drives the hg_full strategy".into()));
    }
    cfg.validate()?;
    let mut net_rng = derive_rng(cfg.seed, "net_init", 0);
    let mut net = PolicyNet::new(cfg.net.clone(), &mut net_rng)?;
    let mut dataset = collect_offline(&mut env, expert, cfg.offline_rollouts, cfg.seed);
    if !dataset.is_empty() {
        net.set_normalizer(ActionNormalizer::fit(
            &dataset.labeled_actions(),
            cfg.net.action_dim,
        ));
    }
    let gate = ExpertGate::new(match cfg.gate {
        GateConfig::Auto => compute_gate_threshold(&dataset)?,
        GateConfig::Fixed(v) => v,
    });
    let noise = cfg.noise_schedule()?;
    let mut opt = Adam::new(cfg.lr);
    let mut nel = dataset.label_count() as u64;
    let mut logs = Vec::new();
    let mut evals = Vec::new();
    let full = cfg.schedule.r_max as usize;

    for i in 0..cfg.offline_epochs {
        let mut trng = derive_rng(cfg.seed, "train", i as u64);
        let stats = train_one_epoch(&net, &mut opt, &dataset, &noise, cfg.batch, &mut trng)?;
        logs.push(EpochLog {
            phase: Phase::Offline,
            epoch: i,
            rank: full,
            mode: net.mode(),
            n_batches: stats.n_batches,
            train_time_s: stats.train_time_s,
            loss: stats.mean_loss,
            nel,
        });
    }

    fn eval_at<E2: Environment + Clone + Send + Sync>(
        cfg: &SessionConfig,
        iteration: u32,
        net: &PolicyNet,
        env: &E2,
        noise: &NoiseSchedule,
        nel: u64,
        evals: &mut Vec<EvalLog>,
    ) -> Result<()> {
        let mut r = derive_rng(cfg.seed, "eval", iteration as u64);
        let seeds: Vec<u64> = (0..cfg.eval_rollouts).map(|_| r.gen()).collect();
        let m = evaluate(&net.cfg, &net.to_state(), env, &seeds, noise)?;
        evals.push(EvalLog {
            iteration,
            sr: m.sr,
            msd_mean: m.msd_mean,
            msd_std: m.msd_std,
            nel,
        });
        Ok(())
    }

    eval_at(&cfg, 0, &net, &env, &noise, nel, &mut evals)?;
    for j in 0..cfg.online_iters {
        let mut roll_rng = derive_rng(cfg.seed, "rollout", j as u64);
        let (traj, labels) = policy_rollout(
            &mut env,
            &net,
            Some(expert),
            RolloutMode::Gated(&gate),
            &noise,
            &mut roll_rng,
        )?;
        nel += labels as u64;
        dataset.push(traj);
        let global = cfg.offline_epochs + j;
        let mut trng = derive_rng(cfg.seed, "train", global as u64);
        let stats = train_one_epoch(&net, &mut opt, &dataset, &noise, cfg.batch, &mut trng)?;
        logs.push(EpochLog {
            phase: Phase::Online,
            epoch: global,
            rank: full,
            mode: net.mode(),
            n_batches: stats.n_batches,
            train_time_s: stats.train_time_s,
            loss: stats.mean_loss,
            nel,
        });
        let done = j + 1;
        if done % cfg.checkpoint_every.max(1) == 0 || done == cfg.online_iters {
            eval_at(&cfg, done, &net, &env, &noise, nel, &mut evals)?;
        }
    }

    Ok(SessionOutcome {
        net_cfg: net.cfg.clone(),
        net_state: net.to_state(),
        logs,
        evals,
        nel,
        gate_threshold: gate.threshold,
        cfg,
    })
}
