use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rampc::config::ControllerConfig;
use rampc::feasibility::WindowSearchConfig;
use rampc::sim::{run_with, Controller, RunOptions, StopAt};

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn rampc(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rampc"))
        .args(args)
        .env("RAMPC_OUT_DIR", out)
        .output()
        .unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn scenario_one_succeeds_inside_its_windows() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario("table2_1.toml");
    let out = rampc(&["run", "--scenario", s.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = json(&dir.path().join("table2_1_ramp.summary.json"));
    assert_eq!(summary["status"], "SUCCESS");
    let tg = summary["t_grasp"].as_f64().unwrap();
    let tp = summary["t_place"].as_f64().unwrap();
    assert!((12.0..=15.5).contains(&tg), "{tg}");
    assert!((16.0..=23.0).contains(&tp), "{tp}");
    assert!(dir.path().join("table2_1_ramp.timing.csv").exists());
}

#[test]
fn same_seed_gives_identical_step_logs() {
    let s = scenario("table2_2.toml");
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let out = rampc(&["run", "--scenario", s.to_str().unwrap(), "--seed", "3", "--controller", "nominal"], d.path());
        assert!(out.status.code().is_some());
    }
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("table2_2_nominal.steps.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn schema_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(scenario("table2_1.toml")).unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, text.replace("payload_mass = 0.2\n", "")).unwrap();
    let out = rampc(&["run", "--scenario", bad.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("payload_mass"));

    let missing = dir.path().join("missing.toml");
    assert_eq!(rampc(&["run", "--scenario", missing.to_str().unwrap()], dir.path()).status.code(), Some(2));
    let s = scenario("table2_1.toml");
    let out = rampc(&["run", "--scenario", s.to_str().unwrap(), "--controller", "pid"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = rampc(&["run", "--scenario", s.to_str().unwrap(), "--config", missing.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn empty_batch_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(rampc(&["batch", "--count", "0"], dir.path()).status.code(), Some(2));
}

#[test]
fn batch_writes_one_row_per_deviation() {
    let dir = tempfile::tempdir().unwrap();
    let out = rampc(&["batch", "--count", "2", "--jobs", "2"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let mut rd = csv::Reader::from_path(dir.path().join("comparison.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
    let devs: Vec<&str> = rows.iter().map(|r| &r[0]).collect();
    assert_eq!(devs, ["0", "0.1", "0.2", "0.5"]);
    assert_eq!(&rows[0][3], "1");
    let mut rd = csv::Reader::from_path(dir.path().join("batch_runs.csv")).unwrap();
    assert_eq!(rd.records().count(), 4 * 2 * 2);
}

#[test]
fn report_counts_runs() {
    let runs = tempfile::tempdir().unwrap();
    for name in ["table2_1.toml", "table2_2.toml", "table2_3.toml"] {
        let s = scenario(name);
        let out = rampc(&["run", "--scenario", s.to_str().unwrap()], runs.path());
        assert!(out.status.code().is_some());
    }
    let rep = tempfile::tempdir().unwrap();
    let out = rampc(&["report", "--runs", runs.path().to_str().unwrap(), "--out", rep.path().to_str().unwrap()], runs.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let mut files: Vec<String> = std::fs::read_dir(rep.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    files.sort();
    assert_eq!(
        files,
        ["estimation.csv", "trajectory_table2_1_ramp.csv", "trajectory_table2_2_ramp.csv", "trajectory_table2_3_ramp.csv"]
    );
    let mut rd = csv::Reader::from_path(rep.path().join("estimation.csv")).unwrap();
    for r in rd.records() {
        let r = r.unwrap();
        let (m, lo, hi): (f64, f64, f64) = (r[3].parse().unwrap(), r[4].parse().unwrap(), r[5].parse().unwrap());
        assert!(lo <= m && m <= hi);
    }
}

#[test]
fn report_without_runs_exits_with_two() {
    let empty = tempfile::tempdir().unwrap();
    let out = rampc(&["report", "--runs", empty.path().to_str().unwrap()], empty.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn single_scenario_certificate_equals_direct_measurement() {
    let dir = tempfile::tempdir().unwrap();
    let search = dir.path().join("search.toml");
    std::fs::write(
        &search,
        "grasp_hi_max = 12.0\nvalidation = 2\n\n[bounds]\np_xy = [0.2, 0.2]\ns = [0.1, 0.1]\nv = [0.5, 0.5]\nmass = [0.1, 0.1]\n\n[bo]\nbudget = 6\n",
    )
    .unwrap();
    let out = rampc(&["windows", "--search", search.to_str().unwrap(), "--jobs", "1"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let cert = json(&dir.path().join("windows.json"));

    let cfg: WindowSearchConfig = toml::from_str(&std::fs::read_to_string(&search).unwrap()).unwrap();
    let lo = cert["grasp_lo_star"].as_f64().unwrap();
    let scn = cfg.grasp_scenario(&[0.2, 0.1, 0.5], lo, cfg.grasp_hi_max).unwrap();
    let opts = RunOptions {
        stop: StopAt::Grasp,
        max_steps: None,
    };
    let direct = run_with(&scn, Controller::RobustAdaptive, &ControllerConfig::default(), opts).unwrap();
    assert_eq!(cert["grasp_hi_star"].as_f64(), direct.t_grasp);
    assert_eq!(cert["feasible"], true);
}
