use std::path::Path;
use std::process::{Command, Output};

use crowdalloc::cli::{read_rows, ComparisonRow, SummaryRow};
use crowdalloc::fixtures::t1_config;
use crowdalloc::processes::ProcessSpec;
use crowdalloc::sim::MetricsReport;
use crowdalloc::traceio::load_trace;

fn crowdalloc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crowdalloc")).args(args).output().unwrap()
}

fn write_t1(dir: &Path) -> String {
    let p = dir.join("t1.json");
    std::fs::write(&p, serde_json::to_string(&t1_config()).unwrap()).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn help_lists_every_flag() {
    let out = crowdalloc(&["simulate", "--help"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for flag in [
        "--config", "--trace", "--policy", "--regime", "--horizon", "--seeds", "--load", "--alpha",
        "--epsilon", "--gamma", "--epoch-seconds", "--jobs", "--out",
    ] {
        assert!(text.contains(flag), "{flag} missing from help");
    }
    let out = crowdalloc(&["capacity", "--help"]);
    let text = String::from_utf8(out.stdout).unwrap();
    for flag in ["--config", "--lambda", "--ray"] {
        assert!(text.contains(flag), "{flag} missing from capacity help");
    }
}

#[test]
fn simulate_outputs_reparse() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_t1(dir.path());
    let out = dir.path().join("run");
    let o = crowdalloc(&[
        "simulate", "--config", &cfg, "--policy", "centralized-exact", "--horizon", "300", "--seeds", "7,8",
        "--load", "0.5,1.2", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows: Vec<SummaryRow> = read_rows(out.join("summary.csv")).unwrap();
    assert_eq!(rows.len(), 4);
    let json: Vec<SummaryRow> = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(json.len(), rows.len());
    for (a, b) in rows.iter().zip(&json) {
        assert_eq!(a.label, b.label);
        assert_eq!(a.verdict, b.verdict);
    }
    for r in &rows {
        let report: MetricsReport =
            serde_json::from_str(&std::fs::read_to_string(out.join(format!("{}.json", r.label))).unwrap()).unwrap();
        assert_eq!(report.seed, r.seed);
        assert_eq!(report.horizon, 300);
        let mut traj = csv::Reader::from_path(out.join(format!("{}_trajectory.csv", r.label))).unwrap();
        assert_eq!(traj.records().count(), 300);
        let mut tat = csv::Reader::from_path(out.join(format!("{}_tat.csv", r.label))).unwrap();
        assert_eq!(tat.records().count(), report.tat.len());
    }
}

#[test]
fn compare_and_gen_trace_outputs_reparse() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("short.csv");
    let o = crowdalloc(&[
        "gen-trace", "--kind", "short", "--load", "20", "--days", "1", "--seed", "3", "--out", trace.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let w = load_trace(&trace).unwrap();
    assert!(!w.is_empty());

    let out = dir.path().join("cmp");
    let o = crowdalloc(&[
        "compare", "--trace", trace.to_str().unwrap(), "--policy", "algo1,algo2,algo3", "--workers", "20",
        "--worker-skills", "3", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows: Vec<ComparisonRow> = read_rows(out.join("comparison.csv")).unwrap();
    let names: Vec<&str> = rows.iter().map(|r| r.policy.as_str()).collect();
    assert_eq!(names, ["algo1", "algo2", "algo3"]);
    assert_eq!(rows[2].regime, "FI");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_t1(dir.path());

    let o = crowdalloc(&["capacity", "--config", &cfg, "--ray", "1"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["boundary"].as_f64().unwrap() - 2.0).abs() <= 1e-6);

    let o = crowdalloc(&["simulate", "--config", &cfg, "--policy", "no-such-policy"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("centralized-exact"));

    let o = crowdalloc(&["simulate", "--config", &cfg, "--policy", "algo3", "--regime", "FF"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("policy requires regime FI"));

    let mut big = t1_config();
    for a in &mut big.agent_types {
        a.availability = Some(ProcessSpec::Deterministic { value: 3000 });
    }
    let p = dir.path().join("big.json");
    std::fs::write(&p, serde_json::to_string(&big).unwrap()).unwrap();
    let o = crowdalloc(&["capacity", "--config", p.to_str().unwrap(), "--lambda", "1"]);
    assert_eq!(o.status.code(), Some(3));

    let blocker = dir.path().join("not-a-dir");
    std::fs::write(&blocker, "x").unwrap();
    let o = crowdalloc(&[
        "simulate", "--config", &cfg, "--policy", "exact", "--horizon", "10", "--out", blocker.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}
