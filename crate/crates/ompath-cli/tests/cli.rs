//! End-to-end tests of the `ompath` binary: exit-code contract, artifact
//! schemas, config/flag precedence, and thread-count independence.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_ompath")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("binary should spawn")
}

fn tmpdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("ompath-cli-test-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("read {path:?}: {e}"))
}

fn summary(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&read(&dir.join("summary.json"))).expect("summary must be valid JSON")
}

#[test]
fn check_reference_configuration_passes() {
    let out = run(&[
        "check", "--force", "pendulum", "--h", "0.51", "--beta", "0.28", "--sigma", "cos",
        "--sigma0", "2", "--amp", "0.1", "--omega", "10",
    ]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("PASS"));
    assert!(text.contains("contraction ratio"));
}

#[test]
fn check_degenerate_noise_fails_with_code_1() {
    // sigma identically zero must reach the checker and fail there (m = 0),
    // not die as a usage error
    let out = run(&["check", "--sigma0", "0"]);
    assert_eq!(out.status.code(), Some(1), "{out:?}");
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn out_of_range_hurst_is_usage_error() {
    let out = run(&["check", "--h", "1.2"]);
    assert_eq!(out.status.code(), Some(2), "{out:?}");
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = run(&["check", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn mpp_missing_boundary_is_usage_error() {
    let out = run(&["mpp", "--n", "65"]);
    assert_eq!(out.status.code(), Some(2), "{out:?}");
    assert!(String::from_utf8_lossy(&out.stderr).contains("boundary"));
}

#[test]
fn zero_paths_is_usage_error() {
    let out = run(&["simulate", "--n-paths", "0"]);
    assert_eq!(out.status.code(), Some(2), "{out:?}");
}

#[test]
fn mpp_free_motion_writes_artifacts() {
    let dir = tmpdir("mpp");
    let out = run(&[
        "mpp", "--force", "zero", "--h", "0.5", "--n", "65", "--x1", "0.5", "--y1", "1",
        "--out", dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let s = summary(&dir);
    // free motion from (0,0) to (1/2,1): the straight ramp, J = -1/2
    let j = s["j"].as_f64().unwrap();
    assert!((j + 0.5).abs() <= 1e-3, "j = {j}");
    assert!(s["converged"].as_bool().unwrap());
    let csv = read(&dir.join("path.csv"));
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,psi,phi"));
    assert_eq!(lines.count(), 65);
    // all floats at 17 significant digits (scientific, 16 fractional places)
    let row1 = csv.lines().nth(1).unwrap();
    for field in row1.split(',') {
        let mantissa = field.split('e').next().unwrap();
        let frac = mantissa.split('.').nth(1).unwrap();
        assert_eq!(frac.len(), 16, "field {field}");
    }
    assert!(dir.join("manifest.toml").exists());
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn simulate_thread_cap_does_not_change_output() {
    let common = [
        "simulate", "--force", "zero", "--h", "0.7", "--n", "129", "--n-paths", "400",
        "--seed", "9",
    ];
    let d1 = tmpdir("sim-t4");
    let d2 = tmpdir("sim-t1");
    let mut a1: Vec<&str> = common.to_vec();
    let o1 = d1.to_str().unwrap().to_owned();
    a1.extend(["--out", &o1, "--threads", "4"]);
    let mut a2: Vec<&str> = common.to_vec();
    let o2 = d2.to_str().unwrap().to_owned();
    a2.extend(["--out", &o2, "--threads", "1"]);
    assert_eq!(run(&a1).status.code(), Some(0));
    assert_eq!(run(&a2).status.code(), Some(0));
    assert_eq!(
        read(&d1.join("mean.csv")),
        read(&d2.join("mean.csv")),
        "mean paths must be byte-identical under different thread caps"
    );
    let _ = std::fs::remove_dir_all(&d1);
    let _ = std::fs::remove_dir_all(&d2);
}

#[test]
fn manifest_rerun_reproduces_csv() {
    let d1 = tmpdir("man-a");
    let out = run(&[
        "simulate", "--force", "zero", "--h", "0.5", "--n", "129", "--n-paths", "200",
        "--seed", "4", "--out", d1.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let d2 = tmpdir("man-b");
    let manifest = d1.join("manifest.toml");
    let out = run(&[
        "simulate", "--config", manifest.to_str().unwrap(), "--out", d2.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    assert_eq!(read(&d1.join("mean.csv")), read(&d2.join("mean.csv")));
    let _ = std::fs::remove_dir_all(&d1);
    let _ = std::fs::remove_dir_all(&d2);
}

#[test]
fn flags_override_config_file() {
    let dir = tmpdir("override");
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("run.toml");
    std::fs::write(&cfg, "force = \"zero\"\nh = 0.5\nn = 129\nn_paths = 50\nseed = 1\n").unwrap();
    let out = run(&[
        "simulate", "--config", cfg.to_str().unwrap(), "--n-paths", "60",
        "--out", dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    assert_eq!(summary(&dir)["n_paths"].as_i64(), Some(60));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn config_typo_is_usage_error() {
    let dir = tmpdir("typo");
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("run.toml");
    std::fs::write(&cfg, "n_pahts = 50\n").unwrap();
    let out = run(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{out:?}");
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn tube_and_ratio_emit_flat_summaries() {
    let dir = tmpdir("ratio");
    let out = run(&[
        "ratio", "--force", "zero", "--h", "0.5", "--n", "129", "--n-paths", "2000",
        "--epsilon", "0.3", "--beta", "0.25", "--path1", "hermite", "--path2", "flat",
        "--x1", "0.5", "--y1", "1", "--seed", "17", "--out", dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let s = summary(&dir);
    assert!(!s["inconclusive"].as_bool().unwrap());
    let dj = s["delta_j"].as_f64().unwrap();
    assert!((dj + 0.5).abs() <= 2e-3, "delta_j = {dj}");
    assert!(s["log_ratio_mc"].as_f64().unwrap() < 0.0);
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn example_duffing_cross_checks_solvers() {
    let dir = tmpdir("exd");
    let out = run(&["example", "duffing", "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let s = summary(&dir);
    assert!(s["bvp_converged"].as_bool().unwrap());
    assert!(s["l_inf_between_solvers"].as_f64().unwrap() <= 1e-2);
    assert!(dir.join("path.csv").exists());
    assert!(dir.join("path_bvp.csv").exists());
    let _ = std::fs::remove_dir_all(&dir);
}
