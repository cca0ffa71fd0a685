//! End-to-end checks of the command-line interface: exit codes, strict
//! config validation, artifact layout, and rerun determinism.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_trimc")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn tmpdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("trimc-cli-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn config_errors_exit_with_code_2() {
    let dir = tmpdir("cfg");
    // unknown key
    let bad = write_config(&dir, "bad.json", r#"{"a": 1.0, "ell": 3.0, "nope": 1}"#);
    let out = Command::new(bin())
        .args(["integrals", "--config"])
        .arg(&bad)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));

    // ell and ell_rule together
    let both = write_config(
        &dir,
        "both.json",
        r#"{"a": 1.0, "ell": 3.0, "ell_rule": true}"#,
    );
    let out = Command::new(bin())
        .args(["integrals", "--config"])
        .arg(&both)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // truncation below the hard core cites the admissible window
    let tight = write_config(&dir, "tight.json", r#"{"a": 2.0, "ell": 1.0}"#);
    let out = Command::new(bin())
        .args(["integrals", "--config"])
        .arg(&tight)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ell"));

    // missing config file
    let out = Command::new(bin())
        .args(["energy", "--config"])
        .arg(dir.join("missing.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn integrals_reports_both_conventions() {
    let dir = tmpdir("integrals");
    let cfg = write_config(&dir, "cfg.json", r#"{"a": 1.0, "ell": 40.0, "seed": 5}"#);
    let out_dir = dir.join("out");
    let out = Command::new(bin())
        .args(["integrals", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("integrals.json")).unwrap())
            .unwrap();
    assert_eq!(report["command"], "integrals");
    assert!(report["config_hash"].as_str().unwrap().len() == 64);
    let payload = &report["payload"];
    let qe = payload["quad_energy"].as_array().unwrap();
    assert_eq!(qe.len(), 2);
    // the two conventions differ by 8/(3 pi)
    let v0 = qe[0][1].as_f64().unwrap();
    let v1 = qe[1][1].as_f64().unwrap();
    let expect = 8.0 / (3.0 * std::f64::consts::PI);
    assert!((v1 / v0 - expect).abs() < 1e-12);
    assert!(payload["ratios"].as_array().unwrap().len() >= 3);
    let csv = fs::read_to_string(out_dir.join("integrals.csv")).unwrap();
    assert!(csv.starts_with("quantity,s5,value"));
}

#[test]
fn energy_artifacts_and_rerun_determinism() {
    let dir = tmpdir("energy");
    let cfg = write_config(
        &dir,
        "cfg.json",
        r#"{
            "a": 1.0, "rho_a3": 2e-3, "n": 24, "ell_rule": true, "seed": 9,
            "boundary": "periodic",
            "mc": {"sweeps": 1500, "burn_in": 200, "chains": 2}
        }"#,
    );
    let run = |out_dir: &Path| {
        let out = Command::new(bin())
            .args(["energy", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(out_dir)
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    };
    let (o1, o2) = (dir.join("o1"), dir.join("o2"));
    run(&o1);
    run(&o2);
    for name in ["energy.json", "series_chain_0.csv", "series_chain_1.csv"] {
        let b1 = fs::read(o1.join(name)).unwrap();
        let b2 = fs::read(o2.join(name)).unwrap();
        assert_eq!(b1, b2, "{name} differs between identical reruns");
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(o1.join("energy.json")).unwrap()).unwrap();
    let est = &report["payload"]["estimate"];
    assert!(est["e"].as_f64().unwrap() >= 0.0);
    assert_eq!(est["meta"]["n"], 24);
    let csv = fs::read_to_string(o1.join("series_chain_0.csv")).unwrap();
    assert!(csv.starts_with("sweep,t,t_diag,t_share,t_disj,acceptance"));
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tmpdir("seed");
    let cfg = write_config(
        &dir,
        "cfg.json",
        r#"{
            "a": 1.0, "rho_a3": 2e-3, "n": 16, "ell_rule": true, "seed": 9,
            "boundary": "periodic",
            "mc": {"sweeps": 600, "burn_in": 100}
        }"#,
    );
    let run = |out_dir: &Path, seed: Option<&str>| {
        let mut c = Command::new(bin());
        c.args(["energy", "--config"]).arg(&cfg).arg("--out").arg(out_dir);
        if let Some(s) = seed {
            c.args(["--seed", s]);
        }
        let out = c.output().unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    };
    let (o1, o2) = (dir.join("a"), dir.join("b"));
    run(&o1, None);
    run(&o2, Some("123"));
    let b1 = fs::read(o1.join("energy.json")).unwrap();
    let b2 = fs::read(o2.join("energy.json")).unwrap();
    assert_ne!(b1, b2, "different seeds must change the outputs");
}

#[test]
fn verify_small_run_passes_and_is_deterministic() {
    let dir = tmpdir("verify");
    let cfg = write_config(
        &dir,
        "cfg.json",
        r#"{"a": 0.05, "ell": 1.0, "seed": 3,
            "verify": {"samples": 4000, "sandwich_configurations": 100}}"#,
    );
    let run = |out_dir: &Path| {
        let out = Command::new(bin())
            .args(["verify", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(out_dir)
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    };
    let (o1, o2) = (dir.join("v1"), dir.join("v2"));
    run(&o1);
    run(&o2);
    let b1 = fs::read(o1.join("verify_report.json")).unwrap();
    let b2 = fs::read(o2.join("verify_report.json")).unwrap();
    assert_eq!(b1, b2);
    let report: serde_json::Value = serde_json::from_slice(&b1).unwrap();
    assert_eq!(report["payload"]["pass"], true);
    assert_eq!(report["payload"]["lemma"].as_array().unwrap().len(), 2);
}

#[test]
fn oracle_command_cross_checks_methods() {
    let dir = tmpdir("oracle");
    // moderate core in a compact box so the chain sees events quickly
    let cfg = write_config(
        &dir,
        "cfg.json",
        r#"{
            "a": 1.0, "n": 3, "box_l": 15.0, "ell": 4.0, "seed": 11,
            "boundary": "periodic",
            "mc": {"sweeps": 60000, "burn_in": 2000, "chains": 2},
            "oracle": {"points": 30000, "randomizations": 8}
        }"#,
    );
    let out_dir = dir.join("out");
    let out = Command::new(bin())
        .args(["oracle", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("oracle.json")).unwrap()).unwrap();
    let payload = &report["payload"];
    assert!(payload["oracle"]["energy_per_particle"].as_f64().unwrap() > 0.0);
    assert!(payload["combined_stderr"].as_f64().unwrap() > 0.0);
}

#[test]
fn unknown_subcommand_is_rejected() {
    let out = Command::new(bin()).args(["frobnicate", "--config", "x.json"]).output().unwrap();
    assert_ne!(out.status.code(), Some(0));
}
