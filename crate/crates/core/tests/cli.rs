use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn osqm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_osqm")).args(args).env("OSQM_THREADS", "1").output().unwrap()
}

fn work(name: &str) -> PathBuf {
    let d = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("cli").join(name);
    let _ = fs::remove_dir_all(&d);
    fs::create_dir_all(&d).unwrap();
    d
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

#[test]
fn run_writes_outputs() {
    let dir = work("run");
    let cfg = fs::read_to_string(configs().join("free.json")).unwrap().replace("\"num_seeds\": 32", "\"num_seeds\": 4");
    let path = dir.join("free.json");
    fs::write(&path, cfg).unwrap();
    let out_dir = dir.join("out");
    let o = osqm(&["--seed", "3", "--out-dir", out_dir.to_str().unwrap(), "--snapshots", "10", "run", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["metadata.json", "summary.csv", "summary.json", "initial_marginals.csv", "initial_wigner.bin", "trajectory_3.csv"] {
        assert!(out_dir.join(f).exists(), "{f} missing");
    }
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 3);
    let bin = fs::read(out_dir.join("initial_wigner.bin")).unwrap();
    assert_eq!(&bin[..4], b"OSQM");
    let summary = fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert!(summary.lines().count() >= 3);
}

#[test]
fn invalid_config_exits_2() {
    let dir = work("invalid");
    let path = dir.join("bad.json");
    fs::write(&path, r#"{"name": "bad", "grid": {"dof": 1, "points": 64, "hbar": 1.0}, "extra": true}"#).unwrap();
    let o = osqm(&["run", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("extra") && err.contains("schedule"), "{err}");

    let cfg = fs::read_to_string(configs().join("free.json")).unwrap().replace("\"hbar\": 0.5", "\"hbar\": -0.5");
    fs::write(&path, cfg).unwrap();
    let o = osqm(&["run", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("grid"));
}

#[test]
fn missing_config_exits_2() {
    let o = osqm(&["run", "/nonexistent/osqm.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/osqm.json"));
}

#[test]
fn bad_backend_is_rejected() {
    let o = osqm(&["--backend", "quantum", "regress"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn regress_subset_passes() {
    let dir = work("regress");
    let o = osqm(&["--out-dir", dir.to_str().unwrap(), "regress", "--only", "1,2,5"]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{stdout}");
    assert_eq!(stdout.lines().filter(|l| l.contains("PASS")).count(), 3, "{stdout}");
    assert!(dir.join("report.json").exists());
}

#[test]
fn strict_thresholds_fail_regress() {
    let dir = work("strict");
    let t = dir.join("t.json");
    fs::write(&t, r#"{"marginals": 0.0}"#).unwrap();
    let o = osqm(&["--out-dir", dir.to_str().unwrap(), "regress", "--only", "2", "--thresholds", t.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn defect_sweep_writes_csv() {
    let dir = work("sweep");
    let o = osqm(&["--out-dir", dir.to_str().unwrap(), "sweep", "defect", "--hbar", "0.25,0.125", "--points", "32,48"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.join("defect_sweep.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 3, "{csv}");
    assert!(csv.contains("# slope"));
}
