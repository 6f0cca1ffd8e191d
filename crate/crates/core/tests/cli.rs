//! End-to-end runs of the `regobs` binary.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const TWO_SENSORS: &str = r#"
truncation.n1 = 3
truncation.n2 = 3
slow.groups = 2
region.x_min = 0.25
region.x_max = 0.75
region.y_min = 0.25
region.y_max = 0.75
sensors.0.kind = "point"
sensors.0.x = 0.2
sensors.0.y = 0.3
sensors.1.kind = "point"
sensors.1.x = 0.7
sensors.1.y = 0.6
time.t_final = 4.0
"#;

fn run(dir: &Path, config: Option<&str>, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_regobs"));
    cmd.args(args).arg("--out").arg(dir.join("out"));
    if let Some(text) = config {
        let path = dir.join("scenario.toml");
        std::fs::write(&path, text).unwrap();
        cmd.arg("--config").arg(path);
    }
    cmd.output().unwrap()
}

fn report(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(|v| v.parse::<f64>().unwrap()).collect())
        .collect();
    (header, rows)
}

#[test]
fn check_reports_both_bases() {
    let dir = tempfile::tempdir().unwrap();
    let v = report(&run(dir.path(), Some(TWO_SENSORS), &["check"]));
    assert_eq!(v["command"], "check");
    assert_eq!(v["check"]["global"]["verdict"], true);
    assert!(v["check"]["global"]["margin"].as_f64().unwrap() > 1e-3);
    assert_eq!(v["check"]["regional"]["basis"], "regional");
    let on_disk: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/report.json")).unwrap()).unwrap();
    assert_eq!(on_disk, v);
}

#[test]
fn midpoint_sensor_lists_offending_mode() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "slow.groups = 2\nsensors.0.kind = \"point\"\nsensors.0.x = 0.5\nsensors.0.y = 0.5\n";
    let v = report(&run(dir.path(), Some(cfg), &["check"]));
    assert_eq!(v["check"]["global"]["verdict"], false);
    let deficient = v["check"]["global"]["deficient_modes"].as_array().unwrap();
    assert!(deficient.iter().any(|m| m["i"] == 1 && m["j"] == 0));
    assert_eq!(v["check"]["sensors"][0]["global"]["is_bad"], true);
}

#[test]
fn config_errors_exit_with_two_and_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), Some("truncation.n1 = 3\nsensors.0.kind = \"probe\"\n"), &["check"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2") && err.contains("sensors.0.kind"), "{err}");

    let out = run(dir.path(), Some("domain.x_max = [\n"), &["check"]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(dir.path(), Some("colour = 3\n"), &["check"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));

    let out = run(dir.path(), None, &["simulate"]);
    assert_eq!(out.status.code(), Some(2), "no sensors is a configuration problem");
}

#[test]
fn resonant_estimator_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!(
        "sensors.0.kind = \"point\"\nsensors.0.x = 0.3\nsensors.0.y = 0.7\nestimator.kind = \"general\"\nestimator.rates = [{:?}]\n",
        -std::f64::consts::PI.powi(2)
    );
    let out = run(dir.path(), Some(&cfg), &["verify"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("resonance") && err.contains("-9.8696"), "{err}");
}

#[test]
fn verify_general_estimator_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"
truncation.n1 = 1
truncation.n2 = 1
sensors.0.kind = "point"
sensors.0.x = 0.3
sensors.0.y = 0.7
sensors.1.kind = "point"
sensors.1.x = 0.8
sensors.1.y = 0.15
estimator.kind = "general"
estimator.rates = [-20.0, -30.0]
gain.kind = "explicit"
gain.rows = 2
gain.cols = 2
gain.h = [1.0, 0.5, -0.3, 1.0]
"#;
    let v = report(&run(dir.path(), Some(cfg), &["verify"]));
    assert_eq!(v["verify"]["pass"], true);
    assert_eq!(v["verify"]["k"], 2);
    assert!(v["verify"]["residuals"]["reconstruction"].as_f64().unwrap() <= 1e-9);

    let v = report(&run(dir.path(), Some(TWO_SENSORS), &["verify"]));
    assert_eq!(v["verify"]["estimator"], "identity");
    assert_eq!(v["verify"]["residuals"]["reconstruction"], 0.0);
}

#[test]
fn simulate_writes_series_with_documented_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("{TWO_SENSORS}gain.kind = \"riccati\"\n").replace("time.t_final = 4.0", "time.t_final = 12.0");
    let v = report(&run(dir.path(), Some(&cfg), &["simulate"]));
    let (header, rows) = read_csv(&dir.path().join("out/trajectory.csv"));
    assert_eq!(header.len(), 1 + 16 + 16 + 2);
    assert_eq!(header[0], "t");
    assert_eq!(header[1], "a_0_0");
    assert_eq!(header[17], "zhat_0_0");
    assert_eq!(&header[33..], ["y_0", "y_1"]);
    assert_eq!(rows.len(), v["simulation"]["samples"].as_u64().unwrap() as usize);

    let (header, rows) = read_csv(&dir.path().join("out/norms.csv"));
    assert_eq!(header, ["t", "err_L2_omega", "err_H1_omega", "err_L2_Omega", "err_H1_Omega"]);
    assert!(rows.iter().all(|r| r[1] <= r[3] + 1e-12 && r[2] <= r[4] + 1e-12));
    assert_eq!(v["files"], serde_json::json!(["trajectory.csv", "norms.csv"]));
    assert_eq!(v["simulation"]["verdict"], "observable");
}

#[test]
fn zero_initial_error_gives_zero_series() {
    let dir = tempfile::tempdir().unwrap();
    let coeffs = "[0.5, -0.25, 0.125, 1.0]";
    let cfg = format!(
        "truncation.n1 = 1\ntruncation.n2 = 1\nsensors.0.kind = \"point\"\nsensors.0.x = 0.3\nsensors.0.y = 0.7\n\
         initial.kind = \"explicit\"\ninitial.coeffs = {coeffs}\nobserver_initial.coeffs = {coeffs}\ntime.t_final = 1.0\n"
    );
    let v = report(&run(dir.path(), Some(&cfg), &["simulate"]));
    let (_, rows) = read_csv(&dir.path().join("out/norms.csv"));
    // Exactly zero at t = 0; afterwards only the observer's RK4 truncation remains.
    assert!(rows[0][1..].iter().all(|&x| x == 0.0));
    assert!(rows.iter().all(|r| r[1..].iter().all(|&x| x <= 1e-5)));
    assert_eq!(v["simulation"]["verdict"], "zero_initial_error");
}

#[test]
fn scan_covers_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let v = report(&run(dir.path(), Some(TWO_SENSORS), &["scan", "--resolution", "41", "--workers", "2"]));
    let (header, rows) = read_csv(&dir.path().join("out/scan.csv"));
    assert_eq!(header, ["x", "y", "margin_global", "margin_regional", "predicate_flag"]);
    assert_eq!(rows.len(), 1681);
    assert_eq!(v["scan"]["rows"], 1681);
    let flagged: Vec<_> = rows.iter().filter(|r| r[4] == 1.0).collect();
    assert!(!flagged.is_empty());
    assert!(flagged.iter().all(|r| r[2] <= 1e-8), "flagged cells must have a vanishing global margin");
}

#[test]
fn scan_is_symmetric_for_symmetric_geometry() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "slow.groups = 3\nregion.x_min = 0.25\nregion.x_max = 0.75\nregion.y_min = 0.25\nregion.y_max = 0.75\n\
               sensors.0.kind = \"point\"\nsensors.0.x = 0.3\nsensors.0.y = 0.3\n";
    report(&run(dir.path(), Some(cfg), &["scan", "--resolution", "11"]));
    let (_, rows) = read_csv(&dir.path().join("out/scan.csv"));
    let n = 11;
    for iy in 0..n {
        for ix in 0..n {
            let a = &rows[iy * n + ix];
            let b = &rows[iy * n + (n - 1 - ix)];
            assert!((a[2] - b[2]).abs() <= 1e-9 && (a[3] - b[3]).abs() <= 1e-9, "{a:?} vs {b:?}");
        }
    }
}

const STRIP: &str = r#"
domain.x_min = 0.0
domain.x_max = 1.0
domain.y_min = 0.0
domain.y_max = 4.0
region.x_min = 0.0
region.x_max = 1.0
region.y_min = 0.0
region.y_max = 2.0
slow.sigma_min = 3.0
gain.kind = "riccati"
time.t_final = 2.0
time.dt = 0.002
"#;

fn counterexample_pair(dir: &Path, x: f64, y: f64) -> (bool, bool) {
    let cfg = format!("{STRIP}sensors.0.kind = \"point\"\nsensors.0.x = {x:?}\nsensors.0.y = {y:?}\n");
    let v = report(&run(dir, Some(&cfg), &["counterexample"]));
    let c = &v["counterexample"]["verdicts"];
    (c["global"].as_bool().unwrap(), c["regional"].as_bool().unwrap())
}

#[test]
fn counterexample_verdict_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let v = report(&run(dir.path(), None, &["counterexample"]));
    let c = &v["counterexample"];
    assert_eq!(c["verdicts"], serde_json::json!({"global": false, "regional": true}));
    assert_eq!(c["auto_placed"], true);
    assert_eq!(c["omega_floor_positive"], true);
    assert_eq!(c["regional_decayed"], true);

    // y = 1 is a zero line of (0,2) on the strip and of (0,1) on the region.
    assert_eq!(counterexample_pair(dir.path(), 0.3, 1.0), (false, false));
    assert_eq!(counterexample_pair(dir.path(), 0.3, 0.6), (true, true));
}

#[test]
fn counterexample_without_contrast_is_infeasible() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), Some("slow.groups = 2\n"), &["counterexample"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("infeasible"));
}

#[test]
fn seed_flag_changes_random_initial_state() {
    let dir = tempfile::tempdir().unwrap();
    let a = report(&run(dir.path(), Some(TWO_SENSORS), &["simulate", "--seed", "1"]));
    let b = report(&run(dir.path(), Some(TWO_SENSORS), &["simulate", "--seed", "2"]));
    assert_eq!(a["seed"], 1);
    assert_ne!(a["simulation"]["norms"][0]["initial"], b["simulation"]["norms"][0]["initial"]);
    assert!(a["config"].as_str().unwrap().contains("seed = 1"));
}
