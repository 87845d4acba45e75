//! End-to-end CLI tests driving the built binary: exit codes, artifacts,
//! resume equivalence, and sampling determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn tim() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tim"))
}

fn small_config(dir: &Path, iterations: u64) -> PathBuf {
    let path = dir.join("run.toml");
    let text = format!(
        r#"
[run]
seed = 3
checkpoint_interval = 0

[dataset]
kind = "eight_gaussians"
n_train = 2000
seed = 5

[network]
width = 16
depth = 1
embed_dim = 8
fourier_bands = 4

[trainer]
batch_size = 16
iterations = {iterations}
probe_interval = 0
"#
    );
    std::fs::write(&path, text).unwrap();
    path
}

fn run_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn train_smoke_produces_final_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 10);
    let out_dir = dir.path().join("run");
    let out = tim().args(["train"]).arg(&cfg).arg("--out").arg(&out_dir).output().unwrap();
    run_ok(&out);
    assert!(out_dir.join("final.tim").exists());
    assert!(out_dir.join("config.resolved.toml").exists());
    assert!(out_dir.join("metrics.jsonl").exists());
}

#[test]
fn malformed_config_key_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[trainer]\nlerning_rate = 0.1\n").unwrap();
    let out = tim()
        .args(["train"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("x"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("lerning_rate"), "stderr: {stderr}");
}

#[test]
fn resume_reproduces_straight_run_bitwise() {
    let dir = tempfile::tempdir().unwrap();

    // Straight run: 20 iterations.
    let cfg20 = small_config(dir.path(), 20);
    let straight = dir.path().join("straight");
    run_ok(&tim().args(["train"]).arg(&cfg20).arg("--out").arg(&straight).output().unwrap());

    // Split run: 10 iterations, then resume for 10 more.
    let cfg10 = {
        let p = dir.path().join("run10.toml");
        std::fs::copy(small_config(dir.path(), 10), &p).unwrap();
        p
    };
    let first = dir.path().join("first");
    run_ok(&tim().args(["train"]).arg(&cfg10).arg("--out").arg(&first).output().unwrap());
    let second = dir.path().join("second");
    let out = tim()
        .args(["train"])
        .arg(&cfg10)
        .arg("--out")
        .arg(&second)
        .arg("--resume")
        .arg(first.join("final.tim"))
        .args(["--iterations", "20"])
        .output()
        .unwrap();
    run_ok(&out);

    let a = std::fs::read(straight.join("final.tim")).unwrap();
    let b = std::fs::read(second.join("final.tim")).unwrap();
    assert_eq!(a, b, "resumed checkpoint differs from the straight run");
}

#[test]
fn sample_deterministic_and_ema_differs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 30);
    let run = dir.path().join("run");
    run_ok(&tim().args(["train"]).arg(&cfg).arg("--out").arg(&run).output().unwrap());
    let ckpt = run.join("final.tim");

    let csv1 = dir.path().join("a.csv");
    let csv2 = dir.path().join("b.csv");
    for csv in [&csv1, &csv2] {
        let out = tim()
            .args(["sample"])
            .arg(&ckpt)
            .arg("--out")
            .arg(csv)
            .args(["--steps", "4", "--n", "64", "--seed", "9"])
            .output()
            .unwrap();
        run_ok(&out);
        let stdout = String::from_utf8_lossy(&out.stdout);
        assert!(stdout.contains("NFE 4"), "stdout: {stdout}");
    }
    assert_eq!(std::fs::read(&csv1).unwrap(), std::fs::read(&csv2).unwrap());

    // Metadata sidecar exists and records the NFE.
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(csv1.with_extension("meta.json")).unwrap())
            .unwrap();
    assert_eq!(meta["nfe"], 4);

    // EMA parameters differ from raw ones after training.
    let ema_csv = dir.path().join("ema.csv");
    run_ok(
        &tim()
            .args(["sample"])
            .arg(&ckpt)
            .arg("--out")
            .arg(&ema_csv)
            .args(["--steps", "4", "--n", "64", "--seed", "9", "--ema"])
            .output()
            .unwrap(),
    );
    assert_ne!(std::fs::read(&csv1).unwrap(), std::fs::read(&ema_csv).unwrap());

    // CFG doubles the evaluation count on a class-conditional model.
    let cfg_csv = dir.path().join("cfg.csv");
    let out = tim()
        .args(["sample"])
        .arg(&ckpt)
        .arg("--out")
        .arg(&cfg_csv)
        .args(["--steps", "4", "--n", "16", "--omega", "1.5", "--class", "2"])
        .output()
        .unwrap();
    run_ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("NFE 8"));

    // PPM emission.
    let ppm = dir.path().join("scatter.ppm");
    run_ok(
        &tim()
            .args(["sample"])
            .arg(&ckpt)
            .arg("--out")
            .arg(dir.path().join("p.csv"))
            .args(["--steps", "1", "--n", "32"])
            .arg("--ppm")
            .arg(&ppm)
            .output()
            .unwrap(),
    );
    assert!(std::fs::read(&ppm).unwrap().starts_with(b"P6"));
}

#[test]
fn sample_rejects_missing_and_corrupt_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let out = tim()
        .args(["sample"])
        .arg(dir.path().join("nope.tim"))
        .arg("--out")
        .arg(dir.path().join("x.csv"))
        .output()
        .unwrap();
    assert!(!out.status.success());

    let bogus = dir.path().join("bogus.tim");
    std::fs::write(&bogus, b"NOPE....").unwrap();
    let out = tim()
        .args(["sample"])
        .arg(&bogus)
        .arg("--out")
        .arg(dir.path().join("y.csv"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("magic"));
}

#[test]
fn verify_fast_passes_and_mutation_hook_fails() {
    let out = tim().args(["verify", "--level", "fast"]).output().unwrap();
    run_ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("PASS"));
    assert!(!stdout.contains("FAIL"));

    let out = tim().args(["verify", "--level", "fast", "--corrupt-db-dt"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("identity-oracle"));
    assert!(stdout.contains("FAIL"));
}

#[test]
fn bench_reports_overhead_and_op_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 10);
    let out = tim().args(["bench"]).arg(&cfg).args(["--iters", "5"]).output().unwrap();
    run_ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("overhead ratio"), "stdout: {stdout}");
    assert!(stdout.contains("extra batch forwards per step: 2"), "stdout: {stdout}");

    let out = tim().args(["bench"]).arg(&cfg).args(["--iters", "0"]).output().unwrap();
    run_ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("nothing to report"));
}
