use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn kpo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kpo"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("failed to launch kpo")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

fn payload(path: &Path) -> String {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .collect::<Vec<_>>()
        .join("\n")
}

const TRAJECTORY: &str = r#"{
  "params": {"omega": 1.0, "epsilon": 1.0, "eta": 1.0, "phi": 0.1072},
  "prior": {"omega_l": 0.7, "omega_h": 2.3},
  "dt": 0.02,
  "duration": 20.0,
  "n_traj": 2,
  "seed": 4
}"#;

#[test]
fn trajectory_files_and_determinism() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "traj.json", TRAJECTORY);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for out in [&a, &b] {
        let o = kpo(&["trajectory", "--config", &cfg, "--out", out.to_str().unwrap(), "--deterministic"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for name in ["truth_000.csv", "photocurrent_001.csv", "ekf_000.csv", "restarts_001.csv"] {
        let x = fs::read(a.join(name)).unwrap();
        let y = fs::read(b.join(name)).unwrap();
        assert_eq!(x, y, "{name} differs between identical runs");
    }
    let ekf = fs::read_to_string(a.join("ekf_000.csv")).unwrap();
    assert!(ekf.starts_with("# kpo "));
    assert!(ekf.contains("# config-sha256: "));
    assert!(ekf.contains("# seed: 4"));
    assert!(!ekf.contains("created-unix"));
    assert!(ekf.contains("step,t,omega_est,restart_flag"));
    // t = 0 row plus one row per step
    assert_eq!(payload(&a.join("ekf_000.csv")).lines().count(), 1 + 1 + 1000);
}

#[test]
fn seed_flag_changes_payload_and_timestamps_appear_by_default() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "traj.json", TRAJECTORY);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(kpo(&["trajectory", "--config", &cfg, "--out", a.to_str().unwrap()]).status.success());
    assert!(kpo(&["trajectory", "--config", &cfg, "--out", b.to_str().unwrap(), "--seed", "5"]).status.success());
    assert_ne!(payload(&a.join("photocurrent_000.csv")), payload(&b.join("photocurrent_000.csv")));
    assert!(fs::read_to_string(a.join("truth_000.csv")).unwrap().contains("created-unix"));
}

#[test]
fn zero_duration_gives_header_only_photocurrent() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "traj.json", &TRAJECTORY.replace("\"duration\": 20.0", "\"duration\": 0.0"));
    let out = tmp.path().join("o");
    assert!(kpo(&["trajectory", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    assert_eq!(payload(&out.join("photocurrent_000.csv")), "step,t,delta_y");
}

#[test]
fn kf_scan_argmax_and_resolution() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "scan.json", r#"{"omega": 1.0, "epsilon": 1.0, "eta": 1.0, "points": 128}"#);
    let out = tmp.path().join("o");
    let o = kpo(&["kf-scan", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let stdout = String::from_utf8_lossy(&o.stdout);
    let phi: f64 = stdout.split_whitespace().nth(2).unwrap().parse().unwrap();
    assert!((phi - 0.1072).abs() < 0.01, "{stdout}");
    assert_eq!(payload(&out.join("kf_scan.csv")).lines().count(), 129);

    let cfg = write_config(tmp.path(), "blind.json", r#"{"omega": 1.0, "epsilon": 1.0, "eta": 0.0, "points": 16}"#);
    let out = tmp.path().join("blind");
    assert!(kpo(&["kf-scan", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let table = payload(&out.join("kf_scan.csv"));
    assert!(table.lines().skip(1).all(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap() == 0.0));
}

#[test]
fn phi_opt_table() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "phi.json",
        r#"{"points": [{"omega": 1.0, "epsilon": 1.0, "eta": 1.0}, {"omega": 1.5, "epsilon": 0.7602, "eta": 1.0}]}"#,
    );
    let out = tmp.path().join("o");
    assert!(kpo(&["phi-opt", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let table = payload(&out.join("phi_opt.csv"));
    let phis: Vec<f64> = table.lines().skip(1).map(|l| l.split(',').nth(3).unwrap().parse().unwrap()).collect();
    assert!((phis[0] - 0.1072).abs() < 0.01);
    assert!((phis[1] - 2.996).abs() < 0.02);
}

#[test]
fn ensemble_then_fit_roundtrip() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "ens.json",
        r#"{
  "params": {"omega": 1.0, "epsilon": 1.0, "eta": 1.0, "phi": 1.0},
  "prior": {"omega_l": 0.7, "omega_h": 2.3},
  "duration": 30.0,
  "n_traj": 60,
  "times": [10.0, 30.0],
  "tail_omega0": 1.3,
  "binning": "shorth"
}"#,
    );
    let out = tmp.path().join("ens");
    let o = kpo(&["ensemble", "--config", &cfg, "--out", out.to_str().unwrap(), "--workers", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(payload(&out.join("ensemble.csv")).lines().count(), 1 + 120);
    assert_eq!(payload(&out.join("fits.csv")).lines().count(), 3);
    assert!(fs::read_to_string(out.join("summary.json")).unwrap().contains("\"provenance\""));

    // the fit subcommand reads any headed CSV column
    let samples = out.join("samples.csv");
    let rows: Vec<String> = payload(&out.join("ensemble.csv"))
        .lines()
        .skip(1)
        .filter(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap() == 30.0)
        .map(|l| l.split(',').nth(2).unwrap().to_string())
        .collect();
    fs::write(&samples, format!("omega_est\n{}\n", rows.join("\n"))).unwrap();
    let fit_cfg = write_config(tmp.path(), "fit.json", &format!(r#"{{"input": "{}", "binning": "shorth"}}"#, samples.display()));
    let o = kpo(&["fit", "--config", &fit_cfg, "--out", tmp.path().join("fit").to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("mode = "));
}

#[test]
fn stats_table() {
    let tmp = TempDir::new().unwrap();
    let input = tmp.path().join("runs.csv");
    fs::write(&input, "# comment\nt,a,b\n0,1.0,1.2\n1,0.9,1.1\n").unwrap();
    let cfg = write_config(tmp.path(), "stats.json", r#"{"input": "runs.csv", "omega_true": 1.0}"#);
    let out = tmp.path().join("o");
    assert!(kpo(&["stats", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let table = payload(&out.join("stats.csv"));
    let first: Vec<f64> = table.lines().nth(1).unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    assert!((first[1] - 1.1).abs() < 1e-12);
    assert!((first[2] - 0.1).abs() < 1e-12);
    assert!((first[3] - 0.02).abs() < 1e-12);
}

#[test]
fn protocol_small_run_and_zero_repeats() {
    let tmp = TempDir::new().unwrap();
    let body = r#"{
  "protocol": {"prior": {"omega_l": 0.7, "omega_h": 2.3}, "eta": 1.0, "n_traj": 20, "n_iterations": 2, "t_star": 20.0, "binning": "shorth"},
  "omega_true": 1.0,
  "repeats": 2
}"#;
    let cfg = write_config(tmp.path(), "p.json", body);
    let out = tmp.path().join("o");
    let o = kpo(&["protocol", "--config", &cfg, "--out", out.to_str().unwrap(), "--deterministic"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("protocol.json").exists());
    assert!(out.join("run001_iter01_ensemble.csv").exists());
    assert_eq!(payload(&out.join("estimate_stats.csv")).lines().count(), 3);

    let cfg = write_config(tmp.path(), "p0.json", &body.replace("\"repeats\": 2", "\"repeats\": 0"));
    let out = tmp.path().join("zero");
    assert!(kpo(&["protocol", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let entries: Vec<_> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(entries, vec![std::ffi::OsString::from("config.json")]);
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("o");
    let out = out.to_str().unwrap();
    // unknown key
    let cfg = write_config(tmp.path(), "bad.json", r#"{"omega": 1.0, "epsilon": 1.0, "eta": 1.0, "typo": 3}"#);
    assert_eq!(kpo(&["kf-scan", "--config", &cfg, "--out", out]).status.code(), Some(2));
    // unstable operating point
    let cfg = write_config(tmp.path(), "unstable.json", r#"{"omega": 1.0, "epsilon": 1.5, "eta": 1.0}"#);
    assert_eq!(kpo(&["kf-scan", "--config", &cfg, "--out", out]).status.code(), Some(2));
    // missing --config
    assert_eq!(kpo(&["kf-scan", "--out", out]).status.code(), Some(2));
    // unreadable config
    assert_eq!(kpo(&["kf-scan", "--config", "/nonexistent/x.json", "--out", out]).status.code(), Some(4));
    // degenerate samples cannot be fitted
    let input = tmp.path().join("same.csv");
    fs::write(&input, format!("omega_est\n{}", "1.0\n".repeat(20))).unwrap();
    let cfg = write_config(tmp.path(), "fit.json", r#"{"input": "same.csv"}"#);
    assert_eq!(kpo(&["fit", "--config", &cfg, "--out", out]).status.code(), Some(3));
}
