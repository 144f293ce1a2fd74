use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn hedgelab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hedgelab"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = hedgelab(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.in.toml");
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let idx = header.iter().position(|h| *h == name).unwrap_or_else(|| panic!("no column {name} in {header:?}"));
    lines.map(|l| l.split(',').nth(idx).unwrap().to_string()).collect()
}

#[test]
fn simulate_is_deterministic_per_seed() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "[scenarios]\ncount = 5\n");
    ok(dir.path(), &["simulate", "--config", &cfg, "--seed", "4", "--out", "a"]);
    ok(dir.path(), &["simulate", "--config", &cfg, "--seed", "4", "--out", "b"]);
    ok(dir.path(), &["simulate", "--config", &cfg, "--seed", "5", "--out", "c"]);
    let read = |d: &str| fs::read(dir.path().join(d).join("paths.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
    assert!(dir.path().join("a/config.toml").exists());
}

#[test]
fn constant_volatility_paths_keep_volatility_fixed() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "[scenarios]\ncount = 3\n[market]\nvol_of_vol = 0.0\n");
    ok(dir.path(), &["simulate", "--config", &cfg, "--out", "o"]);
    let csv = fs::read_to_string(dir.path().join("o/paths.csv")).unwrap();
    let vols = column(&csv, "vol");
    assert!(vols.len() > 3);
    assert!(vols.iter().all(|v| v == &vols[0]));
}

#[test]
fn delta_evaluation_is_costless_and_repeatable() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "[scenarios]\ncount = 150\n");
    ok(dir.path(), &["evaluate", "--config", &cfg, "--baseline", "delta", "--out", "a"]);
    ok(dir.path(), &["evaluate", "--config", &cfg, "--baseline", "delta", "--out", "b"]);
    let metrics = fs::read_to_string(dir.path().join("a/metrics.csv")).unwrap();
    let costs = column(&metrics, "expected_cost");
    assert_eq!(costs.len(), 1);
    assert_eq!(costs[0].parse::<f64>().unwrap(), 0.0);
    assert_eq!(metrics, fs::read_to_string(dir.path().join("b/metrics.csv")).unwrap());
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "[env]\nkapa = 0.02\n");
    let out = hedgelab(dir.path(), &["simulate", "--config", &cfg]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("kapa"));
}

#[test]
fn trained_checkpoint_can_be_evaluated() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "[agent]\ntotal_steps = 0\nhidden = [8]\natoms = 11\neval_episodes = 20\n[scenarios]\ncount = 120\n",
    );
    ok(dir.path(), &["train", "--config", &cfg, "--out", "t"]);
    let ckpt = dir.path().join("t/checkpoint.txt");
    assert!(ckpt.exists());
    assert!(dir.path().join("t/train_log.csv").exists());
    ok(
        dir.path(),
        &["evaluate", "--config", &cfg, "--checkpoint", ckpt.to_str().unwrap(), "--baseline", "delta_gamma", "--out", "e"],
    );
    let metrics = fs::read_to_string(dir.path().join("e/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);

    // the checkpoint's feature mode must match the configured market
    let sv = write_config(dir.path(), "[market]\nvol_of_vol = 0.3\n[scenarios]\ncount = 120\n");
    let out = hedgelab(dir.path(), &["evaluate", "--config", &sv, "--checkpoint", ckpt.to_str().unwrap(), "--out", "x"]);
    assert!(!out.status.success());
}
