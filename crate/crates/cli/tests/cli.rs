use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const TINY: &[&str] = &[
    "--window", "30", "--d-model", "8", "--n-layer", "1", "--d-state", "4", "--strides", "3,5", "--batch-size", "4",
];

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_medmamba"))
        .args(args)
        .current_dir(dir)
        .env_remove("MEDMAMBA_SEED")
        .env_remove("RUST_LOG")
        .output()
        .expect("spawn medmamba")
}

fn ok(args: &[&str], dir: &Path) -> Output {
    let out = run(args, dir);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn tiny_dataset(dir: &Path, name: &str, channels: &str) {
    ok(
        &["synth", "centralized", "--out", name, "--subjects", "10", "--channels", channels, "--len", "30",
          "--segments", "2", "--snr", "4"],
        dir,
    );
}

#[test]
fn synth_writes_contract_and_reruns_identically() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(&["synth", "centralized", "--out", "a", "--subjects", "40", "--channels", "8", "--len", "256"], d);
    let manifest = fs::read_to_string(d.join("a/manifest.jsonl")).unwrap();
    let lines: Vec<_> = manifest.lines().collect();
    assert_eq!(lines.len(), 40);
    for line in &lines {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in ["path", "subject", "label", "sample_rate_hz"] {
            assert!(v.get(key).is_some(), "missing {key} in {line}");
        }
        let csv = fs::read_to_string(d.join("a").join(v["path"].as_str().unwrap())).unwrap();
        assert_eq!(csv.lines().count(), 256 * 8);
        assert!(csv.lines().all(|l| l.split(',').count() == 8));
    }
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("a/meta.json")).unwrap()).unwrap();
    assert_eq!(meta["kind"], "centralized");
    assert_eq!(meta["seed"], 41);

    ok(&["synth", "centralized", "--out", "b", "--subjects", "40", "--channels", "8", "--len", "256"], d);
    assert_eq!(tree_bytes(&d.join("a")), tree_bytes(&d.join("b")));
}

#[test]
fn synth_seed_comes_from_environment_then_flag() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let synth = |out: &str, env: Option<&str>, extra: &[&str]| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_medmamba"));
        cmd.args(["synth", "noise", "--out", out, "--subjects", "2", "--channels", "2", "--len", "8"])
            .args(extra)
            .current_dir(d)
            .env_remove("MEDMAMBA_SEED");
        if let Some(e) = env {
            cmd.env("MEDMAMBA_SEED", e);
        }
        assert!(cmd.output().unwrap().status.success());
        let meta: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(d.join(out).join("meta.json")).unwrap()).unwrap();
        meta["seed"].as_u64().unwrap()
    };
    assert_eq!(synth("x", None, &[]), 41);
    assert_eq!(synth("y", Some("5"), &[]), 5);
    assert_eq!(synth("z", Some("5"), &["--seed", "6"]), 6);
}

#[test]
fn synth_usage_errors() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let out = run(&["synth", "bogus", "--out", "x"], d);
    assert_eq!(code(&out), 2);

    ok(&["synth", "noise", "--out", "x", "--subjects", "2", "--channels", "2", "--len", "8"], d);
    let before = tree_bytes(&d.join("x"));
    let out = run(&["synth", "multiscale", "--out", "x", "--subjects", "4", "--len", "100"], d);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("--force"));
    assert_eq!(tree_bytes(&d.join("x")), before, "refused run must not touch the directory");

    ok(&["synth", "multiscale", "--out", "x", "--subjects", "4", "--len", "100", "--force"], d);
    assert!(fs::read_to_string(d.join("x/meta.json")).unwrap().contains("multiscale"));

    let out = run(&["synth", "centralized", "--out", "y", "--channels", "1"], d);
    assert_eq!(code(&out), 2);
}

#[test]
fn train_eval_round_trip() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    tiny_dataset(d, "ds", "3");
    let mut args = vec!["train", "--manifest", "ds/manifest.jsonl", "--out", "run", "--epochs", "2"];
    args.extend_from_slice(TINY);
    ok(&args, d);
    for f in ["best.ckpt", "history.csv", "report.json", "config.json", "split.json"] {
        assert!(d.join("run").join(f).is_file(), "missing {f}");
    }
    let history = fs::read_to_string(d.join("run/history.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("run/report.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 41);

    let eval = ["eval", "--checkpoint", "run/best.ckpt", "--manifest", "ds/manifest.jsonl", "--out", "e.json"];
    let a = ok(&eval, d);
    let b = ok(&eval, d);
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(fs::read(d.join("e.json")).unwrap(), a.stdout);
    let metrics: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(metrics["test"], serde_json::Value::Null);
    assert_eq!(metrics["accuracy"], report["test"]["accuracy"]);

    // Rerunning with --force reproduces every artifact byte for byte.
    let first = tree_bytes(&d.join("run"));
    let refused = run(&args, d);
    assert_eq!(code(&refused), 2);
    args.push("--force");
    ok(&args, d);
    assert_eq!(tree_bytes(&d.join("run")), first);
}

#[test]
fn train_config_file_and_seed_precedence() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    tiny_dataset(d, "ds", "3");
    fs::write(
        d.join("c.json"),
        r#"{"train": {"epochs": 1, "seed": 7, "batch_size": 4},
            "model": {"window": 30, "d_model": 8, "n_layer": 1, "d_state": 4, "strides": [3, 5]}}"#,
    )
    .unwrap();
    let seed_of = |out: &str, env: Option<&str>, extra: &[&str]| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_medmamba"));
        cmd.args(["train", "--manifest", "ds/manifest.jsonl", "--out", out])
            .args(extra)
            .current_dir(d)
            .env_remove("MEDMAMBA_SEED");
        if let Some(e) = env {
            cmd.env("MEDMAMBA_SEED", e);
        }
        let o = cmd.output().unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let cfg: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(d.join(out).join("config.json")).unwrap()).unwrap();
        cfg["train"]["seed"].as_u64().unwrap()
    };
    let mut tiny = TINY.to_vec();
    tiny.extend(["--epochs", "1"]);
    assert_eq!(seed_of("a", Some("9"), &tiny), 9);
    assert_eq!(seed_of("b", Some("9"), &["--config", "c.json"]), 7);
    assert_eq!(seed_of("c", Some("9"), &["--config", "c.json", "--seed", "3"]), 3);

    fs::write(d.join("bad.json"), r#"{"model": {"bogus": 1}}"#).unwrap();
    let out = run(&["train", "--manifest", "ds/manifest.jsonl", "--out", "e", "--config", "bad.json"], d);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("bogus"));
}

#[test]
fn multi_seed_run_reports_mean_and_std() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    tiny_dataset(d, "ds", "3");
    let mut args = vec!["train", "--manifest", "ds/manifest.jsonl", "--out", "run", "--epochs", "1", "--seeds", "1..3"];
    args.extend_from_slice(TINY);
    ok(&args, d);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("run/report.json")).unwrap()).unwrap();
    assert_eq!(report["runs"].as_array().unwrap().len(), 3);
    assert_eq!(report["test"]["runs"], 3);
    let accs: Vec<f64> = report["runs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["test"]["accuracy"].as_f64().unwrap())
        .collect();
    let mean = accs.iter().sum::<f64>() / 3.0;
    assert!((report["test"]["accuracy"]["mean"].as_f64().unwrap() - mean).abs() < 1e-12);
    for s in 1..=3 {
        assert!(d.join(format!("run/seed-{s}/best.ckpt")).is_file());
    }
    // Shared config and split are found one level up.
    ok(&["eval", "--checkpoint", "run/seed-2/best.ckpt", "--manifest", "ds/manifest.jsonl"], d);
}

#[test]
fn eval_errors() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    tiny_dataset(d, "ds", "3");
    let out = run(&["eval", "--checkpoint", "missing.ckpt", "--manifest", "ds/manifest.jsonl"], d);
    assert_eq!(code(&out), 5);

    let mut args = vec!["train", "--manifest", "ds/manifest.jsonl", "--out", "run", "--epochs", "1"];
    args.extend_from_slice(TINY);
    ok(&args, d);
    tiny_dataset(d, "wide", "4");
    let out = run(&["eval", "--checkpoint", "run/best.ckpt", "--manifest", "wide/manifest.jsonl"], d);
    assert_eq!(code(&out), 3);
    let msg = stderr(&out);
    assert!(msg.contains("(C=4, L=60, K=2)") && msg.contains("(C=3, L=30, K=2)"), "{msg}");

    fs::write(d.join("junk.ckpt"), b"not a checkpoint at all").unwrap();
    let out = run(&["eval", "--checkpoint", "junk.ckpt", "--manifest", "ds/manifest.jsonl"], d);
    assert_eq!(code(&out), 5);
}

#[test]
fn analyze_reports_metrics_and_mismatch() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    tiny_dataset(d, "ds", "3");
    let out = ok(&["analyze", "--manifest", "ds/manifest.jsonl"], d);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["worst_case_mismatch"].as_f64().unwrap() - 0.5 * 2.5f64.ln()).abs() < 1e-12);
    assert_eq!(v["analyzed"], 10);
    assert_eq!(v["recordings"][0]["influence"].as_array().unwrap().len(), 3);
    let sci = v["median_sci"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&sci));

    fs::write(d.join("one.csv"), "1\n2\n3\n").unwrap();
    let out = ok(&["analyze", "--csv", "one.csv", "--strides", "1,2"], d);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["analyzed"], 0);
    assert!(v["recordings"][0]["note"].as_str().unwrap().contains("skipped"));
    assert!((v["worst_case_mismatch"].as_f64().unwrap() - 0.5 * 2f64.ln()).abs() < 1e-12);

    fs::write(d.join("empty.jsonl"), "").unwrap();
    assert_eq!(code(&run(&["analyze", "--manifest", "empty.jsonl"], d)), 2);
    assert_eq!(code(&run(&["analyze"], d)), 2);
    assert_eq!(code(&run(&["analyze", "--csv", "one.csv", "--strides", "5,3"], d)), 2);
}

#[test]
fn gradcheck_passes_and_reports_breaches() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let out = ok(&["gradcheck"], d);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.lines().filter(|l| l.ends_with("PASS")).count() > 10);
    assert!(!text.contains("FAIL"));

    let out = run(&["gradcheck", "--tol", "1e-30"], d);
    assert_eq!(code(&out), 4);
    assert!(stderr(&out).contains("gradient check failed for"));
}

#[test]
fn bench_needs_three_lengths() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    assert_ne!(code(&run(&["bench", "--lens", "1024"], d)), 0);
    let out = ok(&["bench", "--lens", "64,128,256", "--d-inner", "4", "--d-state", "2", "--repeats", "1"], d);
    let csv = String::from_utf8_lossy(&out.stdout);
    assert_eq!(csv.lines().next(), Some("L,median_ms"));
    assert_eq!(csv.lines().count(), 4);
    assert!(stderr(&out).contains("slope"));
}
