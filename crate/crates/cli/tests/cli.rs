use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const CONFIG: &str = r#"
rounds = 4

[seeds]
master = 11

[population]
n = 300

[scenario]
options = 4
stages = 6

[oracle.synthetic]
persistence = 0.5
social_weight = 0.5

[engine.schedule]
baseline_n = 300
"#;

fn aps(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aps")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = aps(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn write_config(dir: &Path) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, CONFIG).unwrap();
    path.display().to_string()
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

#[test]
fn repeated_runs_write_identical_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["run-aps", "--config", &cfg, "--out", a.to_str().unwrap()]);
    ok(&["run-aps", "--config", &cfg, "--out", b.to_str().unwrap()]);
    assert_eq!(fs::read(a.join("summary.json")).unwrap(), fs::read(b.join("summary.json")).unwrap());
    assert_eq!(fs::read(a.join("rounds.jsonl")).unwrap(), fs::read(b.join("rounds.jsonl")).unwrap());

    let summary = json(&a.join("summary.json"));
    let hash = summary["provenance"]["config_hash"].as_str().unwrap().to_string();
    assert_eq!(summary["provenance"]["seeds"]["master"], 11);
    assert_eq!(summary["provenance"]["schedule"]["core_budget"], 45);
    let mut total = 0;
    let text = fs::read_to_string(a.join("rounds.jsonl")).unwrap();
    for line in text.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["provenance"]["config_hash"], hash.as_str());
        let c = &v["calls"];
        total += ["core", "tail", "audit", "reference"].iter().map(|k| c[k].as_u64().unwrap()).sum::<u64>();
        assert!(v["record"]["prototypes"].is_array());
    }
    assert_eq!(text.lines().count(), 4);
    let c = &summary["calls"];
    let summed: u64 = ["core", "tail", "audit", "reference"].iter().map(|k| c[k].as_u64().unwrap()).sum();
    assert_eq!(summed, total);
}

#[test]
fn reference_against_itself_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let run = dir.path().join("ref");
    let eval = dir.path().join("eval");
    ok(&["run-reference", "--config", &cfg, "--out", run.to_str().unwrap()]);
    let traj = run.join("trajectory.json");
    let t = traj.to_str().unwrap();
    ok(&["evaluate", "--config", &cfg, "--out", eval.to_str().unwrap(), "--method", t, "--reference", t]);
    let report = &json(&eval.join("evaluation.json"))["report"];
    assert_eq!(report["final_jsd"].as_f64().unwrap(), 0.0);
    assert_eq!(report["final_exact_match"].as_f64().unwrap(), 1.0);
    let summary = json(&run.join("summary.json"));
    assert_eq!(summary["calls"]["reference"], 1200);
}

#[test]
fn resume_with_changed_config_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("run");
    let o = out.to_str().unwrap();
    ok(&["run-aps", "--config", &cfg, "--out", o]);
    ok(&["run-aps", "--config", &cfg, "--out", o, "--resume"]);
    let refused = aps(&["run-aps", "--config", &cfg, "--out", o, "--resume", "--seed", "12"]);
    assert!(!refused.status.success());
    let err = String::from_utf8_lossy(&refused.stderr);
    assert!(err.contains("config hash"), "{err}");
}

#[test]
fn malformed_config_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "[engine.schedule]\nbaseline_rate = \"high\"\n").unwrap();
    let out = aps(&["run-aps", "--config", path.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("engine.schedule.baseline_rate"), "{err}");

    let typo = aps(&["run-aps", "--override", "population.size=10"]);
    let err = String::from_utf8_lossy(&typo.stderr);
    assert!(!typo.status.success() && err.contains("population"), "{err}");
}

#[test]
fn missing_referenced_file_is_rejected() {
    let out = aps(&["gen-pop", "--override", "scenario.file=\"/nonexistent/scenario.toml\""]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("scenario.file"));
}

#[test]
fn call_scaling_matches_the_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report");
    ok(&["report", "--out", out.to_str().unwrap(), "--override", "rounds=8"]);
    let csv = fs::read_to_string(out.join("call_scaling.csv")).unwrap();
    let rows: Vec<Vec<String>> = csv.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect();
    // B = ceil(0.15 (5000/n)^0.6 n), M_out = ceil(250 (n/5000)^0.4), A = floor(250 (n/5000)^0.4).
    let expected = |n: f64| {
        let b = (0.15 * (n / 5000.0).powf(-0.6) * n).ceil();
        let tails = (0.05 * 5000f64 * (n / 5000.0).powf(0.4)).ceil();
        let audits = (0.05 * 5000f64 * (n / 5000.0).powf(0.4)).floor().max(1.0);
        8.0 * (b + tails + audits)
    };
    let sizes: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert_eq!(sizes, vec![5000.0, 10000.0, 100000.0]);
    for r in &rows {
        let n: f64 = r[1].parse().unwrap();
        let total: f64 = r[8].parse().unwrap();
        assert_eq!(total, expected(n), "n = {n}");
    }
}

#[test]
fn pipeline_from_saved_population_and_graph() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let base = dir.path().join("world");
    let b = base.to_str().unwrap();
    ok(&["gen-pop", "--config", &cfg, "--out", b]);
    ok(&["gen-graph", "--config", &cfg, "--out", b]);
    let saved = [
        "--override".to_string(),
        "population.source=saved".to_string(),
        "--override".to_string(),
        format!("population.dir=\"{}\"", base.join("population").display()),
        "--override".to_string(),
        format!("graph.dir=\"{}\"", base.join("graph").display()),
    ];
    let run = |cmd: &str, out: &Path, extra: &[String]| {
        let mut args = vec![cmd.to_string(), "--config".into(), cfg.clone(), "--out".into(), out.display().to_string()];
        args.extend(extra.iter().cloned());
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        ok(&refs);
    };
    let direct = dir.path().join("direct");
    let loaded = dir.path().join("loaded");
    run("run-aps", &direct, &[]);
    run("run-aps", &loaded, &saved);
    let strip = |v: Value| v["final_distribution"].clone();
    assert_eq!(strip(json(&direct.join("summary.json"))), strip(json(&loaded.join("summary.json"))));

    let baseline = dir.path().join("baseline");
    let matched = format!("baseline.match_summary=\"{}\"", direct.join("summary.json").display());
    run("run-baseline", &baseline, &["--override".into(), matched]);
    let aps_calls = json(&direct.join("summary.json"))["calls"]["core"].as_u64().unwrap()
        + json(&direct.join("summary.json"))["calls"]["tail"].as_u64().unwrap()
        + json(&direct.join("summary.json"))["calls"]["audit"].as_u64().unwrap();
    let base_calls: u64 = json(&baseline.join("summary.json"))["calls_per_round"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .sum();
    assert_eq!(aps_calls, base_calls);

    let reference = dir.path().join("ref");
    run("run-reference", &reference, &[]);
    let eval = dir.path().join("eval");
    let m = direct.join("trajectory.json").display().to_string();
    let r = reference.join("trajectory.json").display().to_string();
    ok(&["evaluate", "--config", &cfg, "--out", eval.to_str().unwrap(), "--method", &m, "--reference", &r, "--decompose"]);
    let ev = json(&eval.join("evaluation.json"));
    assert!(ev["decomposition"]["rounds"].as_array().unwrap().iter().all(|d| d["bound_holds"] == true));
    let rep = dir.path().join("rep");
    let e = eval.join("evaluation.json").display().to_string();
    ok(&["report", "--config", &cfg, "--out", rep.to_str().unwrap(), "--evaluation", &e]);
    let drift = fs::read_to_string(rep.join("drift.csv")).unwrap();
    assert_eq!(drift.lines().count(), 5);
}
