use std::path::Path;
use std::process::{Command, Output};

use contraction_mpc::config::Scenario;
use contraction_mpc::sim::BatchReport;

fn cmpc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cmpc"))
        .args(args)
        .env("RUST_LOG", "off")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn tighten_prints_csv_table() {
    let o = cmpc(&["--preset", "nonholonomic", "tighten"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "j,F1,F2,F3,R1,R2,R3");
    assert_eq!(lines.len(), 12);
    assert_eq!(lines[11], "10,0.2000,0.0000,1.0000,2.0000,0.0000,4.5000");
}

#[test]
fn tighten_respects_horizon_and_decimals() {
    let o = cmpc(&["--preset", "quadruple_tank", "tighten", "--horizon", "17", "--decimals", "4"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert_eq!(text.lines().last().unwrap(), "17,0.0165,0.0137,0.0045,0.0041,0.2350,0.2104,0.1118,0.1016");
}

#[test]
fn zero_disturbance_gives_zero_tightening() {
    let o = cmpc(&["--preset", "nonholonomic", "--dist-bound", "0", "tighten", "--decimals", "2"]);
    assert_eq!(o.status.code(), Some(0));
    for line in stdout(&o).lines().skip(1) {
        assert!(line.split(',').skip(1).all(|v| v == "0.00"), "{line}");
    }
}

#[test]
fn oversized_disturbance_exits_3() {
    let o = cmpc(&["--preset", "nonholonomic", "--dist-bound", "0.6", "tighten"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn bad_invocations_exit_2() {
    assert_eq!(cmpc(&["--preset", "nope", "tighten"]).status.code(), Some(2));
    assert_eq!(cmpc(&["tighten"]).status.code(), Some(2));
    assert_eq!(cmpc(&["--preset", "deadbeat", "--config", "x.json", "tighten"]).status.code(), Some(2));
    assert_eq!(cmpc(&["--preset", "deadbeat", "run", "--formulation", "bogus"]).status.code(), Some(2));
}

fn check_trace_header(path: &Path) {
    let text = std::fs::read_to_string(path).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(header, "k,x1,x2,u1,u2,w1,w2,theta,V_star,q_star,Gamma");
}

#[test]
fn deadbeat_certify_run_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = cmpc(&["--preset", "deadbeat", "--out-dir", out, "certify"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.lines().any(|l| l == "n_p=1"), "{text}");
    assert!(dir.path().join("certificate.json").exists());

    let o = cmpc(&["--preset", "deadbeat", "--out-dir", out, "run", "--runs", "3", "--steps", "5"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report: BatchReport =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report.runs, 3);
    assert_eq!(report.violations, 0);
    assert_eq!(report.faults, 0);
    for i in 0..3 {
        check_trace_header(&dir.path().join(format!("traces/run_{i:03}.csv")));
    }

    let o = cmpc(&["--out-dir", out, "report"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn batch_reports_are_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = cmpc(&["--preset", "deadbeat", "--seed", "9", "--out-dir", d.path().to_str().unwrap(), "run", "--runs", "4"]);
        assert_eq!(o.status.code(), Some(0));
    }
    let ra = std::fs::read(a.path().join("report.json")).unwrap();
    let rb = std::fs::read(b.path().join("report.json")).unwrap();
    assert_eq!(ra, rb);
}

#[test]
fn zero_runs_give_an_empty_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = cmpc(&["--preset", "deadbeat", "--out-dir", dir.path().to_str().unwrap(), "run", "--runs", "0"]);
    assert_eq!(o.status.code(), Some(0));
    let report: BatchReport =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report.runs, 0);
}

#[test]
fn initial_state_outside_constraints_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = Scenario::preset("deadbeat").unwrap();
    s.experiment.x0 = vec![5.0, 5.0];
    let path = dir.path().join("scenario.json");
    std::fs::write(&path, serde_json::to_string_pretty(&s).unwrap()).unwrap();
    let o = cmpc(&["--config", path.to_str().unwrap(), "run", "--runs", "2"]);
    assert_eq!(o.status.code(), Some(5), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn config_file_matches_preset() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scenario.json");
    let s = Scenario::preset("nonholonomic").unwrap();
    std::fs::write(&path, serde_json::to_string(&s).unwrap()).unwrap();
    let from_file = cmpc(&["--config", path.to_str().unwrap(), "tighten"]);
    let from_preset = cmpc(&["--preset", "nonholonomic", "tighten"]);
    assert_eq!(from_file.status.code(), Some(0));
    assert_eq!(from_file.stdout, from_preset.stdout);
}
