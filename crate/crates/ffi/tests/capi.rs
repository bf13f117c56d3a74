use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use osqm_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(osqm_last_error()) }.to_string_lossy().into_owned()
}

fn grid(points: usize, l: f64, hbar: f64) -> *mut OsqmGrid {
    let mut g = ptr::null_mut();
    assert_eq!(osqm_grid_new(1, points, l, hbar, &mut g), OsqmStatus::Ok);
    g
}

#[test]
fn coherent_state_round_trip() {
    let g = grid(64, 8.0, 0.5);
    unsafe {
        assert_eq!(osqm_grid_len(g), 64 * 64);
        let mut w = ptr::null_mut();
        assert_eq!(osqm_wigner_coherent(g, &-1.0, &0.5, &mut w), OsqmStatus::Ok);
        assert!((osqm_wigner_integral(w) - 1.0).abs() < 1e-10);

        let mut small = vec![0.0; 10];
        assert_eq!(osqm_wigner_values(w, small.as_mut_ptr(), small.len()), OsqmStatus::BufferTooSmall);
        assert!(last_error().contains("4096"));
        let mut vals = vec![0.0; osqm_grid_len(g)];
        assert_eq!(osqm_wigner_values(w, vals.as_mut_ptr(), vals.len()), OsqmStatus::Ok);
        assert!(vals.iter().any(|v| *v > 0.0));

        let mut part = ptr::null_mut();
        assert_eq!(osqm_partition_half_planes(g, 0.0, &mut part), OsqmStatus::Ok);
        assert_eq!(osqm_partition_len(part), 2);
        let mut probs = [0.0; 2];
        assert_eq!(osqm_partition_probabilities(part, w, probs.as_mut_ptr(), 2), OsqmStatus::Ok);
        assert!((probs[0] + probs[1] - 1.0).abs() < 1e-8);
        assert!(probs[0] > 0.9);
        let mut defect = f64::NAN;
        assert_eq!(osqm_partition_defect(part, &mut defect), OsqmStatus::Ok);
        assert!(defect > 0.0 && defect < 1.0);

        let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("ffi_dump");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("w.bin");
        let cpath = CString::new(path.to_str().unwrap()).unwrap();
        assert_eq!(osqm_wigner_write(w, cpath.as_ptr()), OsqmStatus::Ok);
        assert_eq!(&std::fs::read(&path).unwrap()[..4], b"OSQM");

        osqm_partition_free(part);
        osqm_wigner_free(w);
        osqm_grid_free(g);
    }
}

#[test]
fn errors_are_reported() {
    let mut g = ptr::null_mut();
    assert_eq!(osqm_grid_new(1, 30, 8.0, 0.5, &mut g), OsqmStatus::Invalid);
    assert!(g.is_null());
    assert!(!last_error().is_empty());

    assert_eq!(osqm_grid_new(1, 64, 8.0, 0.5, ptr::null_mut()), OsqmStatus::NullPointer);
    unsafe {
        let mut d = 0.0;
        assert_eq!(osqm_partition_defect(ptr::null(), &mut d), OsqmStatus::NullPointer);
        assert!(last_error().contains("partition"));
        assert_eq!(osqm_grid_len(ptr::null()), 0);
        assert!(osqm_wigner_integral(ptr::null()).is_nan());
        osqm_grid_free(ptr::null_mut());

        let mut s = ptr::null_mut();
        let bad = CString::new(r#"{"name": "x", "bogus": 1}"#).unwrap();
        assert_eq!(osqm_scenario_from_json(bad.as_ptr(), &mut s), OsqmStatus::Invalid);
        assert!(s.is_null());
        assert!(last_error().contains("bogus"));
    }
}

#[test]
fn scenario_runs() {
    let text = include_str!("../../core/configs/free.json").replace("\"num_seeds\": 32", "\"num_seeds\": 4");
    let json = CString::new(text).unwrap();
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("ffi_free");
    let cdir = CString::new(dir.to_str().unwrap()).unwrap();
    unsafe {
        let mut s = ptr::null_mut();
        assert_eq!(osqm_scenario_from_json(json.as_ptr(), &mut s), OsqmStatus::Ok, "{}", last_error());
        assert_eq!(osqm_scenario_region_count(s), 0);
        assert_eq!(osqm_scenario_run(s, cdir.as_ptr(), 7), OsqmStatus::Ok, "{}", last_error());
        let n = osqm_scenario_region_count(s);
        assert_eq!(n, 2);
        let mut f = vec![0.0; n];
        assert_eq!(osqm_scenario_frequencies(s, f.as_mut_ptr(), n), OsqmStatus::Ok);
        assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        osqm_scenario_free(s);
    }
    assert!(dir.join("summary.csv").exists());
}

#[test]
fn version_is_set() {
    let v = unsafe { CStr::from_ptr(osqm_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

const C_SMOKE: &str = r#"
#include <stdio.h>
#include "osqm.h"

int main(void) {
    OsqmGrid *g = NULL;
    if (osqm_grid_new(1, 30, 8.0, 0.5, &g) != OSQM_STATUS_INVALID) return 1;
    if (osqm_grid_new(1, 64, 8.0, 0.5, &g) != OSQM_STATUS_OK) return 2;
    double x = 1.0, p = 0.0;
    OsqmWigner *w = NULL;
    if (osqm_wigner_coherent(g, &x, &p, &w) != OSQM_STATUS_OK) return 3;
    OsqmPartition *part = NULL;
    if (osqm_partition_half_planes(g, 0.0, &part) != OSQM_STATUS_OK) return 4;
    double probs[2];
    if (osqm_partition_probabilities(part, w, probs, 2) != OSQM_STATUS_OK) return 5;
    printf("%.6f %.6f\n", probs[0], probs[1]);
    osqm_partition_free(part);
    osqm_wigner_free(w);
    osqm_grid_free(g);
    return 0;
}
"#;

#[test]
fn header_compiles_and_links_from_c() {
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(crate_dir.join("include/osqm.h")).unwrap();
    for f in ["osqm_grid_new", "osqm_scenario_run", "osqm_last_error", "OSQM_STATUS_NUMERICAL"] {
        assert!(header.contains(f), "{f} missing from header");
    }
    // deps/<test exe> -> profile dir holding the static library
    let exe = std::env::current_exe().unwrap();
    let lib_dir = exe.parent().and_then(|p| p.parent()).unwrap();
    let lib = lib_dir.join("libosqm_ffi.a");
    assert!(lib.exists(), "{} not built", lib.display());

    let work = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("c_smoke");
    std::fs::create_dir_all(&work).unwrap();
    let src = work.join("smoke.c");
    std::fs::write(&src, C_SMOKE).unwrap();
    let bin = work.join("smoke");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&bin)
        .status()
        .expect("C compiler");
    assert!(status.success());
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    let line = String::from_utf8(out.stdout).unwrap();
    let probs: Vec<f64> = line.split_whitespace().map(|s| s.parse().unwrap()).collect();
    assert!(probs[1] > 0.85 && (probs[0] + probs[1] - 1.0).abs() < 1e-8, "{line}");
}
