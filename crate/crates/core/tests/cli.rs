//! End-to-end checks of the `grouptest` binary: subcommand output values,
//! exit codes, config-file precedence, and byte-level reproducibility.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_grouptest"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn grouptest")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout JSON")
}

fn scratch_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("grouptest-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn params_reports_worked_example() {
    let out = run(&[
        "params", "--model", "traditional", "--k", "10", "--n", "1000", "--eps1", "0.01",
        "--eps2", "0.01", "--p", "0.091",
    ]);
    let v = stdout_json(&out);
    assert_eq!(v["design"]["t"], 941);
    let z = v["design"]["z"].as_f64().unwrap();
    assert!((z - 36.87).abs() < 0.05, "z = {z}");
    assert!(v["moments"]["mu"].as_f64().unwrap().abs() < 1e-12);
    assert_eq!(v["config"]["p"], 0.091);
}

#[test]
fn optimize_reports_adaptive_example() {
    let out = run(&[
        "optimize", "--model", "traditional", "--k", "10", "--n", "1000", "--eps1", "0.01",
        "--eps2", "0.01", "--adaptive",
    ]);
    let v = stdout_json(&out);
    let p = v["p_star"].as_f64().unwrap();
    assert!((p - 0.055).abs() < 0.005, "p* = {p}");
    assert_eq!(v["t_star"], 486);
}

#[test]
fn asymptotics_linear_model() {
    let out = run(&["asymptotics", "--model", "linear", "--k", "10", "--n", "1000000"]);
    let v = stdout_json(&out);
    let t = v["asymptotic_t"].as_f64().unwrap();
    assert!((t - 2763.1021115928547).abs() < 1e-9, "asymptotic = {t}");
}

#[test]
fn simulate_writes_reports_and_is_byte_stable() {
    let dir = scratch_dir("sim");
    let args = |dir: &Path| {
        vec![
            "simulate".to_string(),
            "--model".into(), "traditional".into(),
            "--k".into(), "3".into(),
            "--n".into(), "60".into(),
            "--eps1".into(), "0.05".into(),
            "--eps2".into(), "0.05".into(),
            "--runs".into(), "200".into(),
            "--seed".into(), "9".into(),
            "--threads".into(), "2".into(),
            "--out".into(), dir.display().to_string(),
        ]
    };
    let out_a = bin().args(args(&dir)).output().unwrap();
    assert!(out_a.status.success(), "{}", String::from_utf8_lossy(&out_a.stderr));
    let first: Vec<Vec<u8>> = ["report.json", "runs.csv"]
        .iter()
        .map(|name| std::fs::read(dir.join(name)).unwrap())
        .collect();

    // The exact same invocation must reproduce both files byte-for-byte.
    let out_b = bin().args(args(&dir)).output().unwrap();
    assert!(out_b.status.success());
    assert_eq!(out_a.stdout, out_b.stdout);
    for (name, before) in ["report.json", "runs.csv"].iter().zip(&first) {
        let after = std::fs::read(dir.join(name)).unwrap();
        assert_eq!(&after, before, "{name} differs between identical runs");
    }

    let report: serde_json::Value = serde_json::from_slice(&first[0]).unwrap();
    assert_eq!(report["report"]["runs"], 200);
    assert_eq!(report["config"]["seed"], 9);
    let csv = String::from_utf8(first[1].clone()).unwrap();
    assert!(csv.starts_with("# config {"));
    assert_eq!(csv.lines().count(), 2 + 200);

    let _ = std::fs::remove_dir_all(dir);
}

#[test]
fn simulate_missing_out_dir_fails() {
    let out = run(&[
        "simulate", "--model", "traditional", "--k", "2", "--n", "20", "--runs", "2", "--out",
        "/definitely/not/a/dir",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not exist"));
}

#[test]
fn simulate_emits_trajectories() {
    let dir = scratch_dir("traj");
    let traj = dir.join("traj.csv");
    let out = run(&[
        "simulate", "--model", "traditional", "--k", "2", "--n", "20", "--eps1", "0.1",
        "--eps2", "0.1", "--runs", "200", "--seed", "5", "--out",
        dir.to_str().unwrap(), "--emit-trajectories", traj.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&traj).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# config"));
    assert_eq!(lines.next().unwrap(), "run_id,item_id,is_defective,test_index,running_score");
    assert!(text.lines().count() > 20);
    let _ = std::fs::remove_dir_all(dir);
}

#[test]
fn config_file_with_flag_overrides() {
    let dir = scratch_dir("cfg");
    let cfg_path = dir.join("exp.json");
    std::fs::write(
        &cfg_path,
        r#"{"model": {"kind": "dilution", "r": 0.2}, "k": 5, "n": 100, "eps1": 0.05, "eps2": 0.05, "p": 0.15}"#,
    )
    .unwrap();
    let out = run(&["params", "--config", cfg_path.to_str().unwrap(), "--k", "7"]);
    let v = stdout_json(&out);
    // Flag wins over file; untouched file values survive.
    assert_eq!(v["config"]["k"], 7);
    assert_eq!(v["config"]["n"], 100);
    assert_eq!(v["config"]["model"]["kind"], "dilution");
    assert_eq!(v["config"]["model"]["r"], 0.2);
    let _ = std::fs::remove_dir_all(dir);
}

#[test]
fn infeasible_parameters_exit_nonzero() {
    let out = run(&["params", "--model", "dilution", "--r", "1.5", "--k", "5", "--n", "100"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn unknown_model_params_carry_per_test_densities() {
    let out = run(&[
        "params", "--model", "unknown", "--k", "3", "--n", "40", "--eps1", "0.1", "--eps2",
        "0.1", "--seed", "4",
    ]);
    let v = stdout_json(&out);
    let ps = v["design"]["p"].as_array().expect("per-test density list");
    assert_eq!(ps.len() as u64, v["design"]["t"].as_u64().unwrap());
}
