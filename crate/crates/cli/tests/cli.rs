use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn outflow(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_outflow"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .output()
        .expect("binary runs")
}

fn config(dir: &Path, json: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, json).unwrap();
    path.to_str().unwrap().to_owned()
}

const DRIFT: &str = r#"{
    "field": {"name": "constant_drift", "velocity": [1.0]},
    "levels": [8, 16, 32],
    "times": [0.2],
    "mass_samples": 2
}"#;

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn covering_and_generator_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), DRIFT);
    let out = outflow(dir.path(), &["covering", "--config", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cov = json(&dir.path().join("covering.json"));
    assert_eq!(cov["boxes_per_axis"], serde_json::json!([32]));

    let out = outflow(dir.path(), &["generator", "--config", &cfg]);
    assert!(out.status.success());
    let mtx = fs::read_to_string(dir.path().join("generator.mtx")).unwrap();
    assert!(mtx.starts_with("%%MatrixMarket matrix coordinate real general"));
    assert!(dir.path().join("generator.csv").exists());
    assert!(dir.path().join("generator.json").exists());
}

#[test]
fn evolve_writes_densities_and_accepts_an_imported_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &DRIFT.replace("\"mass_samples\": 2", "\"mass_samples\": 2, \"lambda\": 1.0"));
    assert!(outflow(dir.path(), &["generator", "--config", &cfg]).status.success());
    let out = outflow(dir.path(), &["evolve", "--config", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&dir.path().join("report.json"));
    let mass0 = report["densities"][0]["mass"].as_f64().unwrap();
    let mass1 = report["densities"][1]["mass"].as_f64().unwrap();
    // box quadrature of the bump is accurate to about 1e-8
    assert!((mass0 - 1.0).abs() < 1e-6 && mass1 < mass0);
    assert!(report["resolvent"]["relative_residual"].as_f64().unwrap() <= 1e-10);

    let raw = fs::read(dir.path().join("evolved_0.bin")).unwrap();
    assert_eq!(u64::from_le_bytes(raw[..8].try_into().unwrap()), 32);
    assert_eq!(raw.len(), 8 + 8 * 32);
    let direct = fs::read_to_string(dir.path().join("evolved_0.csv")).unwrap();
    assert!(direct.starts_with("index,value\n"));

    let mtx = dir.path().join("generator.mtx");
    let out = outflow(dir.path(), &["evolve", "--config", &cfg, "--matrix", mtx.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(fs::read_to_string(dir.path().join("evolved_0.csv")).unwrap(), direct);
}

#[test]
fn converge_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), DRIFT);
    let out = outflow(dir.path(), &["converge", "--config", &cfg, "--threads", "2", "--require-decrease"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let errors = fs::read_to_string(dir.path().join("errors.csv")).unwrap();
    assert_eq!(errors.lines().next(), Some("level,t,function,e_l1,order_hat"));
    assert_eq!(errors.lines().count(), 4);
    let mass = fs::read_to_string(dir.path().join("massloss.csv")).unwrap();
    assert!(mass.starts_with("t,mass"));
    assert!(json(&dir.path().join("report.json"))["errors"].is_array());
}

#[test]
fn reference_and_ulam() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        r#"{
            "field": {"name": "rotation"},
            "space": {"kind": "box", "lo": [-1, -1], "hi": [1, 1]},
            "functions": [{"kind": "radial_bump", "center": [0.2, 0.0], "radius": 0.5}],
            "boxes": [12, 12],
            "t": 0.3,
            "mode": "killed",
            "sampling": {"kind": "monte_carlo", "samples": 8, "seed": 1}
        }"#,
    );
    let out = outflow(dir.path(), &["reference", "--config", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("reference.csv").exists() && dir.path().join("reference.bin").exists());

    let out = outflow(dir.path(), &["ulam", "--config", &cfg, "--seed", "9"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let meta = json(&dir.path().join("ulam.json"));
    assert_eq!(meta["seed"], 9);
    assert_eq!(meta["mode"], "killed");
    assert!(dir.path().join("ulam.mtx").exists() && dir.path().join("ulam.csv").exists());
}

#[test]
fn check_passes_on_a_valid_generator() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        r#"{"field": {"name": "linear1d", "a": -1.0, "b": 0.2}, "levels": [16], "suite": {"samples": 3}}"#,
    );
    let out = outflow(dir.path(), &["check", "--config", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(fs::read_to_string(dir.path().join("checks.csv")).unwrap().starts_with("level,check,passed,margin"));
}

#[test]
fn failed_check_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    // an impossible resolvent tolerance fails the resolvent identity check
    let cfg = config(
        dir.path(),
        r#"{"levels": [16], "suite": {"samples": 2, "resolvent_tolerance": -1.0}}"#,
    );
    let out = outflow(dir.path(), &["check", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn runtime_and_usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let out = outflow(dir.path(), &["covering", "--config", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let cfg = config(dir.path(), r#"{"levels": [32, 16]}"#);
    assert_eq!(outflow(dir.path(), &["converge", "--config", &cfg]).status.code(), Some(1));
    assert_eq!(outflow(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(outflow(dir.path(), &["covering", "--threads", "0"]).status.code(), Some(1));
    assert_eq!(outflow(dir.path(), &["--help"]).status.code(), Some(0));
}
