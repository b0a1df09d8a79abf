use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dred::cli::{selftest_exit_code, TRAJECTORY_HEADER};
use dred::config::ScenarioFile;
use dred::selftest::{run_selftest, SelftestOptions};
use dred::simulator::run;
use tempfile::TempDir;

fn dred(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dred")).args(args).output().unwrap()
}

fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

/// Bundled m = 1 scenario with a shorter horizon and optional text edits.
fn short_config(dir: &Path, edits: &[(&str, &str)]) -> PathBuf {
    let mut text = std::fs::read_to_string(bundled("scenario_5_1.json")).unwrap();
    text = text.replace("\"t_final\": 60.0", "\"t_final\": 2.0");
    for (from, to) in edits {
        assert!(text.contains(from), "edit target {from:?} missing");
        text = text.replace(from, to);
    }
    let path = dir.join("config.json");
    std::fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_artifacts() {
    let tmp = TempDir::new().unwrap();
    let cfg = short_config(tmp.path(), &[]);
    let out = tmp.path().join("out");
    let o = dred(&["run", "--config", s(&cfg), "--out", s(&out), "--json"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(metrics["metadata"]["steps"], 2000);
    let on_disk: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics, on_disk);
    let gains: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("gains.json")).unwrap()).unwrap();
    assert_eq!(gains["k"], serde_json::json!([2.0, 1.1]));
    let csv = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), TRAJECTORY_HEADER);
    assert_eq!(csv.lines().count(), 1 + 2001 * 10 * 2);
    let leftovers: Vec<_> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".tmp"))
        .collect();
    assert!(leftovers.is_empty());
}

#[test]
fn trajectory_csv_round_trips_logged_errors() {
    let tmp = TempDir::new().unwrap();
    let cfg = short_config(tmp.path(), &[("\"eps_bar\": 0.0", "\"eps_bar\": 0.05")]);
    let out = tmp.path().join("out");
    assert_eq!(
        dred(&["run", "--config", s(&cfg), "--out", s(&out)]).status.code(),
        Some(0)
    );
    let log = run(&ScenarioFile::load(&cfg).unwrap().resolve().unwrap().scenario).unwrap();

    let csv = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let mut worst: HashMap<(u64, usize), f64> = HashMap::new();
    let mut times: HashMap<u64, f64> = HashMap::new();
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let t: f64 = f[0].parse().unwrap();
        let mu: usize = f[2].parse().unwrap();
        let err: f64 = f[5].parse().unwrap();
        let x: f64 = f[3].parse().unwrap();
        let r: f64 = f[4].parse().unwrap();
        assert_eq!(err, (x - r).abs());
        let e = worst.entry((t.to_bits(), mu)).or_insert(0.0);
        *e = e.max(err);
        times.insert(t.to_bits(), t);
    }
    assert_eq!(times.len(), log.len());
    for (k, t) in log.times().iter().enumerate() {
        for mu in 0..=1 {
            assert_eq!(worst[&(t.to_bits(), mu)], log.errors(k)[mu], "t = {t}, mu = {mu}");
        }
    }
}

#[test]
fn malformed_json_exits_2_without_outputs() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("bad.json");
    std::fs::write(&cfg, "{\"m\": 1,").unwrap();
    let out = tmp.path().join("out");
    let o = dred(&["run", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn unknown_key_exits_2() {
    let tmp = TempDir::new().unwrap();
    let cfg = short_config(tmp.path(), &[("\"dt\":", "\"delta\": 1, \"dt\":")]);
    let o = dred(&["run", "--config", s(&cfg), "--out", s(&tmp.path().join("out"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn disconnected_network_exits_3_with_violation_name() {
    let tmp = TempDir::new().unwrap();
    let cfg = short_config(
        tmp.path(),
        &[(
            "{\"preset\": \"cycle\", \"n\": 10}",
            "{\"edges\": [[1, 2], [3, 4], [4, 5]], \"n\": 5}",
        )],
    );
    let out = tmp.path().join("out");
    let o = dred(&["run", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Disconnected"));
    assert!(!out.exists());
}

#[test]
fn blow_up_exits_4_without_outputs() {
    let tmp = TempDir::new().unwrap();
    let rows: Vec<String> = (0..10).map(|_| "[0.0, 5e12]".to_string()).collect();
    let matrix = format!("{{\"matrix\": [{}]}}", rows.join(", "));
    let cfg = short_config(tmp.path(), &[("{\"range\": [-5.0, 5.0], \"seed\": 1}", &matrix)]);
    let out = tmp.path().join("out");
    let o = dred(&["run", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(4));
    assert!(!out.exists());
}

#[test]
fn sweep_writes_csv_and_scaling() {
    let tmp = TempDir::new().unwrap();
    let cfg = short_config(tmp.path(), &[("\"t_final\": 2.0", "\"t_final\": 20.0")]);
    let out = tmp.path().join("sweep");
    let o = dred(&[
        "sweep",
        "--config",
        s(&cfg),
        "--param",
        "dt",
        "--values",
        "0.001,0.002,0.004",
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "param,value,mu,steady_state_err");
    assert_eq!(csv.lines().count(), 1 + 3 * 2);
    let scaling: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("scaling.json")).unwrap()).unwrap();
    assert_eq!(scaling["fits"][0]["predicted"], 2.0);
    assert_eq!(scaling["fits"][1]["predicted"], 1.0);
}

#[test]
fn sweep_with_two_values_exits_2() {
    let tmp = TempDir::new().unwrap();
    let cfg = short_config(tmp.path(), &[]);
    let out = tmp.path().join("sweep");
    let o = dred(&[
        "sweep",
        "--config",
        s(&cfg),
        "--param",
        "eps",
        "--values",
        "0.01,0.02",
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn bad_sweep_param_exits_2() {
    let tmp = TempDir::new().unwrap();
    let cfg = short_config(tmp.path(), &[]);
    let o = dred(&[
        "sweep",
        "--config",
        s(&cfg),
        "--param",
        "gain",
        "--values",
        "1,2,3",
        "--out",
        "x",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn verify_gains_rejects_small_k1() {
    let tmp = TempDir::new().unwrap();
    let cfg = short_config(
        tmp.path(),
        &[(
            "{\"explicit\": [2.0, 1.1], \"tilde\": [2.0, 0.55]}",
            "{\"explicit\": [2.0, 0.9]}",
        )],
    );
    let out = tmp.path().join("v");
    let o = dred(&[
        "verify-gains",
        "--config",
        s(&cfg),
        "--samples",
        "500",
        "--out",
        s(&out),
        "--json",
    ]);
    assert_eq!(o.status.code(), Some(5));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let conditions = report["conditions"].as_array().unwrap();
    let k1 = conditions.iter().find(|c| c["name"] == "k1>1").unwrap();
    assert_eq!(k1["passed"], false);
    assert!(out.join("verify_gains.json").exists());
}

#[test]
fn verify_gains_m3_checks_recursion_only() {
    let o = dred(&["verify-gains", "--config", s(&bundled("scenario_5_2.json")), "--json"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["mode"], "recursion-form check only");
    assert_eq!(report["recursion_conforming"], false);
    assert!(report["k0_star"].is_null());

    let tmp = TempDir::new().unwrap();
    let text = std::fs::read_to_string(bundled("scenario_5_2.json"))
        .unwrap()
        .replace("\"explicit\": [50.0, 14.92, 10.6, 2.0], ", "");
    let cfg = tmp.path().join("tilde.json");
    std::fs::write(&cfg, text).unwrap();
    let o = dred(&["verify-gains", "--config", s(&cfg), "--json"]);
    assert_eq!(o.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["passed"], true);
    assert!((report["k"][1].as_f64().unwrap() - 1.1 * 50f64.powf(2.0 / 3.0)).abs() < 1e-12);
}

#[test]
fn selftest_exit_codes() {
    let o = dred(&["selftest", "--json"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["passed"], true);

    let corrupted = run_selftest(&SelftestOptions {
        draws: 100,
        networks: 5,
        equilibrium_offset: 1e-3,
        ..Default::default()
    });
    assert_ne!(selftest_exit_code(&corrupted), 0);
}

#[test]
fn help_and_missing_args() {
    assert_eq!(dred(&["--help"]).status.code(), Some(0));
    assert_eq!(dred(&["run"]).status.code(), Some(2));
}
