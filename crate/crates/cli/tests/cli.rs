// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn polvec(args: &[&str], config: Option<&Path>, out: Option<&Path>) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_polvec"));
    c.args(args).env_remove("POLVEC_OUT");
    if let Some(p) = config {
        c.arg("-c").arg(p);
    }
    if let Some(o) = out {
        c.arg("-o").arg(o);
    }
    c.output().unwrap()
}

fn ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

fn write_config(dir: &Path, json: &str) -> PathBuf {
    let p = dir.join("cfg.json");
    std::fs::write(&p, json).unwrap();
    p
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(str::to_string).collect()).collect()
}

#[test]
fn two_sources_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"seed": 1, "toy": {}, "planted": {"d_model": 8, "n_layers": 1, "per_side": 4, "signal": 1, "noise": 1}}"#);
    let o = polvec(&["plant"], Some(&cfg), Some(&dir.path().join("out")));
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("activation sources"));
}

#[test]
fn missing_seed_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"planted": {"d_model": 8, "n_layers": 1, "per_side": 4, "signal": 1, "noise": 1}}"#);
    let o = polvec(&["plant"], Some(&cfg), Some(&dir.path().join("out")));
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed"));
}

#[test]
fn planted_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("nested/out");
    let cfg = fixture("plant.json");
    for cmd in ["plant", "learn", "detect", "correlate"] {
        ok(&polvec(&[cmd], Some(&cfg), Some(&out)));
    }
    assert!(out.join("manifest-plant.json").exists());

    let rows = csv_rows(&out.join("detection.csv"));
    assert_eq!(rows[0], ["method", "dimension", "layer", "split", "accuracy", "n"]);
    assert!(rows[1..].iter().any(|r| r[4].parse::<f64>().unwrap() >= 0.99));

    let grid = csv_rows(&out.join("correlation_caa_L1.csv"));
    assert_eq!(grid.len(), 9);
    for (i, row) in grid[1..].iter().enumerate() {
        assert_eq!(row.len(), 9);
        assert_eq!(row[i + 1].parse::<f64>().unwrap(), 1.0);
    }

    let o = polvec(&["detect", "--split", "ood"], Some(&cfg), Some(&out));
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("ood"));

    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("manifest-detect.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 42);
    assert!(manifest["inputs"].as_array().unwrap().iter().any(|i| i["path"] == "registry.actv"));
}

#[test]
fn out_dir_from_env() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_polvec"))
        .args(["synth", "--seed", "3"])
        .env("POLVEC_OUT", dir.path().join("env-out"))
        .current_dir(dir.path())
        .output()
        .unwrap();
    ok(&o);
    assert!(dir.path().join("env-out/statements.csv").exists());
}

#[test]
fn toy_lens_and_sweep_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let cfg = fixture("toy.json");
    ok(&polvec(&["learn"], Some(&cfg), Some(out)));
    ok(&polvec(&["lens", "--k", "4"], Some(&cfg), Some(out)));
    let lens = csv_rows(&out.join("lens_p0.csv"));
    assert_eq!(lens.len(), 1 + 8);
    assert!(lens.iter().all(|r| r.len() == 1 + 4));

    ok(&polvec(&["sweep", "--alphas", "0,1,3"], Some(&cfg), Some(out)));
    let sweep = csv_rows(&out.join("sweep.csv"));
    assert_eq!(sweep.len(), 1 + 3);
    assert_eq!(sweep[1][2].parse::<f64>().unwrap(), 0.0);
}

#[test]
fn zero_alpha_steer_matches_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let cfg = fixture("toy.json");
    ok(&polvec(&["learn"], Some(&cfg), Some(out)));
    ok(&polvec(&["steer", "--alpha", "0"], Some(&cfg), Some(out)));
    let strip = |name: &str| -> Vec<String> {
        std::fs::read_to_string(out.join(name))
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with("# plan"))
            .map(str::to_string)
            .collect()
    };
    assert_eq!(strip("baseline.txt"), strip("steered.txt"));
}
