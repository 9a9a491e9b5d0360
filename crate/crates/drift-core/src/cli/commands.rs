//! Subcommand implementations behind the `drift` binary.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cli::{
    checkpoint_from_session, load_checkpoint, save_checkpoint, session_from_checkpoint, RunConfig,
};
use crate::diffusion::{BlockMode, NetConfig, PolicyNet};
use crate::harness::{
    derive_rng, evaluate, metrics_aggregate, DaggerSession, EpochLog, EvalLog, GateConfig,
    PointReach2D, scripted_expert, SessionConfig, Strategy,
};
use crate::numerics::Array;
use crate::schedule::{DecayKind, RankSchedule};
use crate::DriftError;
use crate::Result;

/// Documented process exit codes.
pub fn exit_code(err: &DriftError) -> i32 {
    match err {
        DriftError::Config(_) => 2,
        DriftError::CheckpointVersion { .. } => 3,
        DriftError::Checkpoint(_) => 4,
        _ => 1,
    }
}

/// Seed precedence: explicit flag, then DRIFT_SEED, then the config value.
pub fn apply_seed_override(cfg: &mut RunConfig, flag: Option<u64>) -> Result<()> {
    if let Ok(v) = std::env::var("DRIFT_SEED") {
        cfg.session.seed = v
            .parse()
            .map_err(|_| DriftError::Config(format!("DRIFT_SEED is not a u64: {v:?}")))?;
    }
    if let Some(s) = flag {
        cfg.session.seed = s;
    }
    Ok(())
}

pub struct TrainArgs {
    pub config: PathBuf,
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub resume: Option<PathBuf>,
    /// Stop (checkpointing) after this many online iterations; for testing
    /// interrupted runs.
    pub stop_after_iter: Option<u32>,
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(d) = &args.out_dir {
        cfg.out_dir = d.clone();
    }
    apply_seed_override(&mut cfg, args.seed)?;
    let hash = cfg.hash();
    std::fs::create_dir_all(&cfg.out_dir)?;

    let env = PointReach2D::new();
    let mut session = match &args.resume {
        Some(p) => {
            let ck = load_checkpoint(p)?;
            if ck.config_hash != hash {
                return Err(DriftError::Config(
                    "checkpoint was created from a different config".into(),
                ));
            }
            let state = session_from_checkpoint(&ck)?;
            DaggerSession::from_state(env, &scripted_expert, cfg.session.clone(), &state)?
        }
        None => DaggerSession::new(env, &scripted_expert, cfg.session.clone())?,
    };

    let mut resolved = cfg.clone();
    resolved.session.gate = GateConfig::Fixed(session.gate.threshold);
    std::fs::write(cfg.out_dir.join("config.resolved.json"), resolved.to_json())?;

    let save = |session: &DaggerSession<PointReach2D>, name: &str| -> Result<()> {
        let ck = checkpoint_from_session(
            &cfg.run_id,
            hash,
            &cfg.session,
            &session.net().cfg,
            &session.to_state(),
        );
        save_checkpoint(&ck, &cfg.out_dir.join(name))
    };

    let total = cfg.session.offline_epochs;
    while session.progress().0 < total {
        session.run_offline_epoch()?;
    }
    if session.progress().1 == 0 {
        save(&session, "ckpt_offline.drft")?;
    }
    if cfg.session.online_iters == 0 && session.evals.is_empty() {
        session.eval_checkpoint(0)?;
    }
    let every = cfg.session.checkpoint_every.max(1);
    while session.progress().1 < cfg.session.online_iters {
        session.run_online_iter()?;
        let j = session.progress().1;
        if j % every == 0 || j == cfg.session.online_iters {
            save(&session, &format!("ckpt_iter{j:03}.drft"))?;
        }
        if args.stop_after_iter == Some(j) {
            save(&session, "ckpt_interrupt.drft")?;
            write_metrics_csv(&cfg.out_dir.join("metrics.csv"), &cfg.run_id, &session.logs)?;
            write_checkpoints_csv(&cfg.out_dir.join("checkpoints.csv"), &session.evals)?;
            return Ok(());
        }
    }
    save(&session, "ckpt_final.drft")?;

    write_metrics_csv(&cfg.out_dir.join("metrics.csv"), &cfg.run_id, &session.logs)?;
    write_checkpoints_csv(&cfg.out_dir.join("checkpoints.csv"), &session.evals)?;
    let report = metrics_aggregate(&session.logs);
    std::fs::write(
        cfg.out_dir.join("report.json"),
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    Ok(())
}

pub fn write_metrics_csv(path: &Path, run_id: &str, logs: &[EpochLog]) -> Result<()> {
    let mut out = String::from("run_id,phase,epoch,rank,batch_time_s,loss,nel\n");
    for l in logs {
        let bt = l.train_time_s / l.n_batches.max(1) as f64;
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            run_id,
            l.phase.as_str(),
            l.epoch,
            l.rank,
            bt,
            l.loss,
            l.nel
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_checkpoints_csv(path: &Path, evals: &[EvalLog]) -> Result<()> {
    let mut out = String::from("iteration,sr,msd_mean,msd_std,nel\n");
    for e in evals {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            e.iteration, e.sr, e.msd_mean, e.msd_std, e.nel
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub n: usize,
    pub seed: u64,
    pub seeds: Option<Vec<u64>>,
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let ck = load_checkpoint(&args.checkpoint)?;
    let state = session_from_checkpoint(&ck)?;
    let noise = ck.meta.session.noise_schedule()?;
    let env = PointReach2D::new();
    let seeds: Vec<u64> = match &args.seeds {
        Some(s) => s.clone(),
        None => {
            let mut r = derive_rng(args.seed, "cli_eval", 0);
            (0..args.n).map(|_| r.gen()).collect()
        }
    };
    let m = evaluate(&ck.meta.net, &state.net_state, &env, &seeds, &noise)?;
    println!("{}", serde_json::to_string_pretty(&m).expect("metrics serialize"));
    Ok(())
}

pub struct BenchArgs {
    pub mode: BlockMode,
    /// Per-layer rank divisors: each layer runs at max(1, p / d).
    pub divisors: Vec<usize>,
    pub batch: usize,
    /// Timed batches per row (after 5 discarded warmup batches).
    pub iters: usize,
}

/// FLOP/time table over rank settings. Prints CSV to stdout.
pub fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let mut cfg = NetConfig::default_toy(6);
    cfg.mode = args.mode;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut net = PolicyNet::new(cfg.clone(), &mut rng)?;
    let noise = crate::diffusion::NoiseSchedule::default_desk();
    println!("divisor,fwd_flops,trainable_params,fwd_ms_median,fwd_ms_iqr,bwd_ms_median,bwd_ms_iqr");
    for &d in &args.divisors {
        if args.mode != BlockMode::Plain {
            net.set_rank_div(d, &mut rng)?;
        }
        let (fwd, bwd) = time_batches(&net, &noise, args.batch, args.iters, &mut rng)?;
        let (fm, fq) = median_iqr(fwd);
        let (bm, bq) = median_iqr(bwd);
        let params: usize = net
            .blocks()
            .iter()
            .map(|b| b.trainable_weight_param_count() + b.geom.c_out)
            .sum();
        println!(
            "{},{},{},{},{},{},{}",
            d,
            net.forward_flops(),
            params,
            fm * 1e3,
            fq * 1e3,
            bm * 1e3,
            bq * 1e3
        );
    }
    Ok(())
}

/// Timed forward/backward passes; returns per-batch seconds with the first 5
/// warmup batches discarded.
pub fn time_batches<R: Rng>(
    net: &PolicyNet,
    noise: &crate::diffusion::NoiseSchedule,
    batch: usize,
    iters: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let a = net.cfg.action_dim;
    let h = net.cfg.horizon;
    let x = Array::randn(&[batch, a, h], rng);
    let obs = Array::randn(&[batch, net.cfg.obs_flat_dim()], rng);
    let target = Array::randn(&[batch, a, h], rng);
    let ts: Vec<usize> = (0..batch).map(|_| rng.gen_range(1..=noise.t_diff())).collect();
    let mut fwd = Vec::new();
    let mut bwd = Vec::new();
    for it in 0..iters + 5 {
        let t0 = std::time::Instant::now();
        let mut tape = crate::numerics::Tape::new();
        let pred = net.forward(&mut tape, &x, &ts, &obs)?;
        let tgt = tape.constant(target.clone());
        let loss = tape.mse(pred, tgt)?;
        let t1 = std::time::Instant::now();
        tape.backward(loss)?;
        let t2 = std::time::Instant::now();
        if it >= 5 {
            fwd.push((t1 - t0).as_secs_f64());
            bwd.push((t2 - t1).as_secs_f64());
        }
    }
    Ok((fwd, bwd))
}

pub fn median_iqr(mut v: Vec<f64>) -> (f64, f64) {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |f: f64| v[((v.len() - 1) as f64 * f).round() as usize];
    (q(0.5), q(0.75) - q(0.25))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    DecayFn,
    RMin,
}

pub struct SweepArgs {
    pub config: PathBuf,
    pub axis: SweepAxis,
    pub values: Option<Vec<String>>,
    pub seeds: u64,
    pub out_dir: Option<PathBuf>,
}

/// Parse a decay-variant name like "sig0.5" into schedule settings; "hg_full"
/// selects the full-rank baseline instead.
fn decay_variant(name: &str) -> Result<Option<(DecayKind, f64)>> {
    Ok(Some(match name {
        "hg_full" => return Ok(None),
        "linear" => (DecayKind::Linear, 0.5),
        "cosine" => (DecayKind::Cosine, 0.5),
        "exp0.1" => (DecayKind::Exponential, 0.1),
        "exp0.5" => (DecayKind::Exponential, 0.5),
        "sig0.1" => (DecayKind::Sigmoid, 0.1),
        "sig0.5" => (DecayKind::Sigmoid, 0.5),
        other => {
            return Err(DriftError::Config(format!(
                "unknown decay variant {other:?} (expected linear, cosine, exp0.1, exp0.5, sig0.1, sig0.5, hg_full)"
            )))
        }
    }))
}

fn sweep_session(base: &SessionConfig, axis: SweepAxis, value: &str) -> Result<SessionConfig> {
    let mut cfg = base.clone();
    match axis {
        SweepAxis::DecayFn => match decay_variant(value)? {
            None => {
                cfg.strategy = Strategy::HgFull;
                cfg.net.mode = Strategy::HgFull.initial_mode();
            }
            Some((kind, tau)) => {
                cfg.strategy = Strategy::DriftRm;
                cfg.net.mode = Strategy::DriftRm.initial_mode();
                cfg.schedule = RankSchedule::new(
                    kind,
                    cfg.schedule.r_max,
                    cfg.schedule.r_min,
                    cfg.schedule.total_epochs,
                )?
                .with_tau(tau);
            }
        },
        SweepAxis::RMin => {
            let r: u32 = value
                .parse()
                .map_err(|_| DriftError::Config(format!("r_min value not a u32: {value:?}")))?;
            cfg.schedule.r_min = r;
            if cfg.schedule.r_min > cfg.schedule.r_max {
                return Err(DriftError::Config("r_min exceeds r_max".into()));
            }
        }
    }
    Ok(cfg)
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(d) = &args.out_dir {
        cfg.out_dir = d.clone();
    }
    apply_seed_override(&mut cfg, None)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let values: Vec<String> = match &args.values {
        Some(v) => v.clone(),
        None => match args.axis {
            SweepAxis::DecayFn => ["linear", "cosine", "exp0.1", "exp0.5", "sig0.1", "sig0.5", "hg_full"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            SweepAxis::RMin => ["8", "16", "32", "64"].iter().map(|s| s.to_string()).collect(),
        },
    };
    let mut success = String::from("value,seed,iteration,sr,msd_mean,msd_std,nel\n");
    let mut loss = String::from("value,seed,phase,epoch,loss\n");
    let mut mbt = String::from("value,seed,nel,mbt_offline,mbt_online,mbt_all,ct_s\n");
    for value in &values {
        for k in 0..args.seeds {
            let mut scfg = sweep_session(&cfg.session, args.axis, value)?;
            scfg.seed = cfg.session.seed + k;
            let env = PointReach2D::new();
            let session = crate::harness::drift_dagger(env, &scripted_expert, scfg)?;
            let out = session.outcome();
            for e in &out.evals {
                success.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    value, k, e.iteration, e.sr, e.msd_mean, e.msd_std, e.nel
                ));
            }
            for l in &out.logs {
                loss.push_str(&format!(
                    "{},{},{},{},{}\n",
                    value,
                    k,
                    l.phase.as_str(),
                    l.epoch,
                    l.loss
                ));
            }
            let r = metrics_aggregate(&out.logs);
            mbt.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                value,
                k,
                r.nel,
                r.mbt_offline,
                r.mbt_online.map_or(String::from(""), |v| v.to_string()),
                r.mbt_all,
                r.ct_s
            ));
        }
    }
    std::fs::write(cfg.out_dir.join("sweep_success.csv"), success)?;
    std::fs::write(cfg.out_dir.join("sweep_loss.csv"), loss)?;
    std::fs::write(cfg.out_dir.join("sweep_mbt.csv"), mbt)?;
    Ok(())
}

pub struct SchedulePreviewArgs {
    pub kind: DecayKind,
    pub r_max: u32,
    pub r_min: u32,
    pub epochs: u32,
    pub tau: f64,
    pub midpoint: Option<u32>,
}

pub fn cmd_schedule_preview(args: &SchedulePreviewArgs) -> Result<()> {
    let mut s = RankSchedule::new(args.kind, args.r_max, args.r_min, args.epochs)?.with_tau(args.tau);
    s.midpoint = args.midpoint;
    println!("epoch,rank");
    for (i, r) in s.table() {
        println!("{i},{r}");
    }
    Ok(())
}

pub fn cmd_checkpoint_inspect(path: &Path) -> Result<()> {
    let ck = load_checkpoint(path)?;
    let hash_hex: String = ck.config_hash.iter().map(|b| format!("{b:02x}")).collect();
    println!("version: {}", ck.version);
    println!("config_hash: {hash_hex}");
    println!("run_id: {}", ck.meta.run_id);
    println!("strategy: {}", ck.meta.session.strategy.as_str());
    println!("mode: {:?}", ck.meta.net.mode);
    println!("block_ranks: {:?}", ck.meta.block_ranks);
    println!(
        "progress: {} offline epochs, {} online iterations",
        ck.meta.offline_done, ck.meta.online_done
    );
    println!("nel: {}", ck.meta.nel);
    println!("gate_threshold: {}", ck.meta.gate_threshold);
    println!("trajectories: {}", ck.meta.traj.len());
    println!("arrays ({}):", ck.arrays.len());
    let mut offset = 0usize;
    for a in &ck.arrays {
        let bytes = a.array.numel() * a.dtype.size();
        println!(
            "  {:<40} {:>4} {:>16} {:>10} bytes @ {}",
            a.name,
            a.dtype.as_str(),
            format!("{:?}", a.array.shape()),
            bytes,
            offset
        );
        offset += bytes;
    }
    Ok(())
}
