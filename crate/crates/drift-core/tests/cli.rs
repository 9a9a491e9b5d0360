//! End-to-end tests of the `drift` binary: exit codes, output schemas, and
//! run determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn drift_bin() -> PathBuf {
    // Integration tests live next to the binary in target/<profile>/.
    let mut p = std::env::current_exe().unwrap();
    p.pop();
    if p.ends_with("deps") {
        p.pop();
    }
    p.join("drift")
}

fn run(args: &[&str]) -> Output {
    Command::new(drift_bin())
        .args(args)
        .env_remove("DRIFT_SEED")
        .output()
        .expect("binary runs")
}

fn tiny_config(dir: &Path, out: &str, seed: u64) -> PathBuf {
    let cfg = format!(
        r#"{{
  "run_id": "cli-test",
  "out_dir": "{}",
  "session": {{
    "strategy": "drift_rm",
    "offline_epochs": 2,
    "online_iters": 2,
    "offline_rollouts": 2,
    "eval_rollouts": 2,
    "checkpoint_every": 1,
    "batch": 16,
    "lr": 0.001,
    "t_diff": 5,
    "beta_end": 0.3,
    "seed": {seed},
    "schedule": {{"kind": "sigmoid", "r_max": 96, "r_min": 8, "total_epochs": 2, "tau": 0.5}}
  }}
}}"#,
        dir.join(out).display()
    );
    let path = dir.join(format!("{out}.json"));
    std::fs::write(&path, cfg).unwrap();
    path
}

#[test]
fn train_produces_expected_files_and_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "out", 7);
    let o = run(&["train", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let out = dir.path().join("out");
    for f in [
        "config.resolved.json",
        "metrics.csv",
        "checkpoints.csv",
        "report.json",
        "ckpt_offline.drft",
        "ckpt_final.drft",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }

    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(
        lines.next().unwrap(),
        "run_id,phase,epoch,rank,batch_time_s,loss,nel"
    );
    // 2 offline epochs + 2 online iterations.
    assert_eq!(lines.count(), 4);
    for line in metrics.lines().skip(1) {
        assert_eq!(line.split(',').count(), 7, "row {line}");
    }

    let checkpoints = std::fs::read_to_string(out.join("checkpoints.csv")).unwrap();
    assert_eq!(
        checkpoints.lines().next().unwrap(),
        "iteration,sr,msd_mean,msd_std,nel"
    );
    // Evals at iteration 0, 1, 2 with checkpoint_every = 1.
    assert_eq!(checkpoints.lines().count(), 4);

    let resolved: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("config.resolved.json")).unwrap())
            .unwrap();
    // The auto gate threshold is resolved to a concrete number in the snapshot.
    assert!(resolved["session"]["gate"]["fixed"].is_number());

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    for key in ["nel", "mbt_offline", "mbt_online", "mbt_all", "ct_s"] {
        assert!(!report[key].is_null(), "report missing {key}");
    }
}

#[test]
fn same_seed_is_deterministic_and_different_seed_is_not() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "a", 7);
    assert!(run(&["train", cfg.to_str().unwrap()]).status.success());
    let out_b = dir.path().join("b");
    assert!(run(&[
        "train",
        cfg.to_str().unwrap(),
        "--out-dir",
        out_b.to_str().unwrap()
    ])
    .status
    .success());

    // Timing columns are wall clock; everything else must match bitwise.
    let strip_time = |p: &Path| -> String {
        std::fs::read_to_string(p.join("metrics.csv"))
            .unwrap()
            .lines()
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                format!("{},{},{},{},{},{}", f[0], f[1], f[2], f[3], f[5], f[6])
            })
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip_time(&dir.path().join("a")), strip_time(&out_b));
    assert_eq!(
        std::fs::read_to_string(dir.path().join("a/checkpoints.csv")).unwrap(),
        std::fs::read_to_string(out_b.join("checkpoints.csv")).unwrap()
    );

    let out_c = dir.path().join("c");
    let o = Command::new(drift_bin())
        .args([
            "train",
            cfg.to_str().unwrap(),
            "--out-dir",
            out_c.to_str().unwrap(),
        ])
        .env("DRIFT_SEED", "8")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_ne!(
        std::fs::read_to_string(dir.path().join("a/checkpoints.csv")).unwrap(),
        std::fs::read_to_string(out_c.join("checkpoints.csv")).unwrap()
    );
}

#[test]
fn resume_reproduces_the_uninterrupted_final_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "full", 3);
    assert!(run(&["train", cfg.to_str().unwrap()]).status.success());

    let part = dir.path().join("part");
    assert!(run(&[
        "train",
        cfg.to_str().unwrap(),
        "--out-dir",
        part.to_str().unwrap(),
        "--stop-after-iter",
        "1"
    ])
    .status
    .success());
    assert!(run(&[
        "train",
        cfg.to_str().unwrap(),
        "--out-dir",
        part.to_str().unwrap(),
        "--resume",
        part.join("ckpt_interrupt.drft").to_str().unwrap()
    ])
    .status
    .success());

    let full = std::fs::read(dir.path().join("full/ckpt_final.drft")).unwrap();
    let resumed = std::fs::read(part.join("ckpt_final.drft")).unwrap();
    assert_eq!(full, resumed, "resumed final checkpoint differs");
}

#[test]
fn eval_prints_json_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "out", 7);
    assert!(run(&["train", cfg.to_str().unwrap()]).status.success());
    let ckpt = dir.path().join("out/ckpt_final.drft");
    let o = run(&["eval", ckpt.to_str().unwrap(), "--n", "3", "--seed", "1"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).expect("JSON on stdout");
    assert!(v["sr"].is_number());
    assert!(v["msd_mean"].is_number());
    assert_eq!(v["n"], 3);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    // Missing file.
    let o = run(&["train", dir.path().join("nope.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    // Unknown field, with position info on stderr.
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\n  \"run_idd\": \"x\"\n}").unwrap();
    let o = run(&["train", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains(":2:"));

    // Invalid DRIFT_SEED.
    let cfg = tiny_config(dir.path(), "out", 7);
    let o = Command::new(drift_bin())
        .args(["train", cfg.to_str().unwrap()])
        .env("DRIFT_SEED", "not-a-number")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn checkpoint_errors_exit_3_and_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "out", 7);
    assert!(run(&["train", cfg.to_str().unwrap()]).status.success());
    let ckpt = dir.path().join("out/ckpt_final.drft");
    let bytes = std::fs::read(&ckpt).unwrap();

    // Version mismatch: exit 3.
    let mut versioned = bytes.clone();
    versioned[4] = 99;
    let vpath = dir.path().join("v99.drft");
    std::fs::write(&vpath, &versioned).unwrap();
    let o = run(&["eval", vpath.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));

    // Truncation: exit 4.
    let tpath = dir.path().join("trunc.drft");
    std::fs::write(&tpath, &bytes[..bytes.len() / 2]).unwrap();
    let o = run(&["eval", tpath.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));

    // Resuming under a different config: exit 2.
    let other = tiny_config(dir.path(), "other", 99);
    let o = run(&[
        "train",
        other.to_str().unwrap(),
        "--resume",
        ckpt.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn schedule_preview_matches_library_table() {
    let o = run(&[
        "schedule-preview",
        "--kind",
        "sigmoid",
        "--r-max",
        "96",
        "--r-min",
        "8",
        "--epochs",
        "10",
        "--tau",
        "0.5",
    ]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "epoch,rank");
    let sched = drift_core::schedule::RankSchedule::new(
        drift_core::schedule::DecayKind::Sigmoid,
        96,
        8,
        10,
    )
    .unwrap()
    .with_tau(0.5);
    for (line, (i, r)) in lines.zip(sched.table()) {
        assert_eq!(line, format!("{i},{r}"));
    }
}

#[test]
fn bench_reports_rank_independent_forward_flops() {
    let o = run(&[
        "bench",
        "--mode",
        "factored",
        "--divisors",
        "1,8",
        "--batch",
        "4",
        "--iters",
        "3",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(
        rows[0],
        vec![
            "divisor",
            "fwd_flops",
            "trainable_params",
            "fwd_ms_median",
            "fwd_ms_iqr",
            "bwd_ms_median",
            "bwd_ms_iqr"
        ]
    );
    assert_eq!(rows.len(), 3);
    // Forward FLOPs identical across divisors; trainable params shrink.
    assert_eq!(rows[1][1], rows[2][1]);
    let full: u64 = rows[1][2].parse().unwrap();
    let eighth: u64 = rows[2][2].parse().unwrap();
    assert!(eighth < full / 4);
}

#[test]
fn sweep_writes_aggregated_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "out", 7);
    let sweep_out = dir.path().join("sweep");
    let o = run(&[
        "sweep",
        cfg.to_str().unwrap(),
        "--axis",
        "r-min",
        "--values",
        "8,96",
        "--seeds",
        "1",
        "--out-dir",
        sweep_out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let success = std::fs::read_to_string(sweep_out.join("sweep_success.csv")).unwrap();
    assert_eq!(
        success.lines().next().unwrap(),
        "value,seed,iteration,sr,msd_mean,msd_std,nel"
    );
    // Two cells, three evals each (iterations 0, 1, 2).
    assert_eq!(success.lines().count(), 7);
    let loss = std::fs::read_to_string(sweep_out.join("sweep_loss.csv")).unwrap();
    assert_eq!(loss.lines().next().unwrap(), "value,seed,phase,epoch,loss");
    assert_eq!(loss.lines().count(), 9); // 2 cells x 4 epochs
    let mbt = std::fs::read_to_string(sweep_out.join("sweep_mbt.csv")).unwrap();
    assert!(mbt
        .lines()
        .next()
        .unwrap()
        .starts_with("value,seed,nel,mbt_offline"));
    assert_eq!(mbt.lines().count(), 3);
}

#[test]
fn checkpoint_inspect_lists_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "out", 7);
    assert!(run(&["train", cfg.to_str().unwrap()]).status.success());
    let ckpt = dir.path().join("out/ckpt_final.drft");
    let o = run(&["checkpoint-inspect", ckpt.to_str().unwrap()]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("version: 1"));
    assert!(text.contains("strategy: drift_rm"));
    assert!(text.contains("param.head.w"));
    assert!(text.contains("opt.m.head.w"));
    assert!(text.contains("data.0.obs"));
}
