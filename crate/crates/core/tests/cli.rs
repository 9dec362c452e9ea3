use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;
use sha2::{Digest, Sha256};

const MM1_MODEL: &str =
    r#""model": {"lambda": "1", "h": "2", "lambda0": "1", "lambda_sup": 1, "h_sup": 2}"#;

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn mm1(experiment: &str) -> String {
    format!(r#"{{{MM1_MODEL}, "experiment": {experiment}, "seed": 3}}"#)
}

fn varq(args: &[&str], config: &Path, out: &Path) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_varq"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
        .status
        .code()
        .unwrap()
}

fn report(out: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap()
}

#[test]
fn validate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ok = write_config(dir.path(), "ok.json", &mm1("{}"));
    let out = dir.path().join("ok");
    assert_eq!(varq(&["validate"], &ok, &out), 0);
    assert_eq!(report(&out)["result"]["c0_estimate"], 2.0);

    let heavy = write_config(
        dir.path(),
        "heavy.json",
        r#"{"model": {"lambda": "0.5", "h": "6/(1+x)", "lambda0": "0.5", "lambda_sup": 0.5, "h_sup": 6}}"#,
    );
    let out = dir.path().join("heavy");
    assert_eq!(varq(&["validate"], &heavy, &out), 0);
    let c0 = report(&out)["result"]["c0_estimate"].as_f64().unwrap();
    assert!((c0 - 6.0).abs() < 1e-9);

    let no_idle = write_config(
        dir.path(),
        "idle.json",
        r#"{"model": {"lambda": "1", "h": "2", "lambda0": "0", "lambda_sup": 1, "h_sup": 2}}"#,
    );
    let out = dir.path().join("idle");
    assert_eq!(varq(&["validate"], &no_idle, &out), 2);
    assert_eq!(report(&out)["result"]["idle_arrival_ok"], false);
}

#[test]
fn config_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let missing = dir.path().join("missing.json");
    assert_eq!(varq(&["stationary"], &missing, &out), 1);
    let bad = write_config(dir.path(), "bad.json", "{ not json");
    assert_eq!(varq(&["stationary"], &bad, &out), 1);
    let km = write_config(dir.path(), "km.json", &mm1(r#"{"k": 2, "m": 1}"#));
    assert_eq!(varq(&["hitting"], &km, &out), 1);
    let expr = write_config(
        dir.path(),
        "expr.json",
        r#"{"model": {"lambda": "1 +", "h": "2", "lambda_sup": 1, "h_sup": 2}}"#,
    );
    assert_eq!(varq(&["validate"], &expr, &out), 1);
    let status = Command::new(env!("CARGO_BIN_EXE_varq"))
        .arg("bogus")
        .output()
        .unwrap()
        .status;
    assert_eq!(status.code(), Some(1));
}

#[test]
fn understated_bound_is_rejected_before_simulating() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"model": {"lambda": "1", "h": "2", "lambda_sup": 0.5, "h_sup": 2}, "experiment": {"cycles": 200}}"#,
    );
    let out = dir.path().join("o");
    assert_eq!(varq(&["stationary"], &cfg, &out), 2);
    assert_eq!(
        report(&out)["result"]["conditions"]["boundedness_ok"],
        false
    );
}

#[test]
fn stationary_outputs_and_manifest_digests() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        &mm1(r#"{"cycles": 2000, "m_max": 4}"#),
    );
    let out = dir.path().join("o");
    assert_eq!(varq(&["stationary"], &cfg, &out), 0);
    let table = std::fs::read_to_string(out.join("table.csv")).unwrap();
    assert!(table.starts_with("m,value,std_error,ci_low,ci_high\n"));
    assert_eq!(table.lines().count(), 6);
    let r = report(&out);
    assert_eq!(r["result"]["num_cycles"], 2000);
    assert!(r["config"].get("output_dir").is_none());
    let manifest: Value =
        serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    for name in ["report.json", "table.csv"] {
        let digest = hex::encode(Sha256::digest(std::fs::read(out.join(name)).unwrap()));
        assert_eq!(manifest["outputs"][name], Value::String(digest));
    }
    assert!(manifest["wall_time_seconds"].as_f64().unwrap() >= 0.0);
    assert_eq!(manifest["version"], env!("CARGO_PKG_VERSION"));
}

#[test]
fn seed_override_controls_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &mm1(r#"{"horizon": 20}"#));
    let read = |o: &str| std::fs::read(dir.path().join(o).join("trajectory.csv")).unwrap();
    let run = |seed: &str, o: &str| varq(&["simulate", "--seed", seed], &cfg, &dir.path().join(o));
    assert_eq!(run("1", "a"), 0);
    assert_eq!(run("1", "b"), 0);
    assert_eq!(run("2", "c"), 0);
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
    let csv = String::from_utf8(read("a")).unwrap();
    assert!(csv.starts_with("t,kind,n,x,y\n0,start,1,0,0\n"));
}

#[test]
fn gate_flag_turns_failed_checks_into_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    // ten replicas cannot reach the standard-error target
    let cfg = write_config(dir.path(), "c.json", &mm1(r#"{"replicas": 10}"#));
    assert_eq!(varq(&["dynkin"], &cfg, &dir.path().join("a")), 0);
    assert_eq!(varq(&["dynkin", "--gate"], &cfg, &dir.path().join("b")), 3);
    assert_eq!(report(&dir.path().join("b"))["passed"], false);
}

#[test]
fn uninformative_convergence_grid_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        &mm1(
            r#"{"start": {"n": 1, "x": 0, "y": 0}, "time_grid": [60, 80], "replicas": 500, "reference_cycles": 2000, "bootstrap": 50}"#,
        ),
    );
    let out = dir.path().join("o");
    assert_eq!(varq(&["converge"], &cfg, &out), 3);
    let curve = std::fs::read_to_string(out.join("curve.csv")).unwrap();
    assert!(curve.starts_with("t,tv,tv_noise_floor\n"));
    assert!(report(&out)["result"]["fit_exponent"].is_null());
}

#[test]
fn sampler_flag_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        &mm1(r#"{"replicas": 200, "starts": [{"n": 1, "x": 0, "y": 0}]}"#),
    );
    let out = dir.path().join("o");
    assert_eq!(varq(&["hitting", "--sampler", "inversion"], &cfg, &out), 0);
    assert_eq!(report(&out)["sampler"], "inversion");
}
