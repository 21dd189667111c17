use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(name)
}

fn imcsynth(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_imcsynth"))
        .args(args)
        .output()
        .unwrap()
}

/// Bistable system on a coarse grid, written into `dir`.
fn small_system(dir: &Path, grid: usize) -> PathBuf {
    let mut v: Value =
        serde_json::from_str(&fs::read_to_string(data("bistable.json")).unwrap()).unwrap();
    v["grid"] = serde_json::json!([grid, grid]);
    let p = dir.join("system.json");
    fs::write(&p, v.to_string()).unwrap();
    p
}

fn run_file(dir: &Path, extra: Value) -> PathBuf {
    small_system(dir, 4);
    let mut cfg = serde_json::json!({
        "system": "system.json",
        "dra": data("phi1.dra.json"),
        "eps_thr": 0.3,
        "max_iters": 3,
        "out": "out",
    });
    for (k, v) in extra.as_object().unwrap() {
        cfg[k] = v.clone();
    }
    let p = dir.join("run.json");
    fs::write(&p, cfg.to_string()).unwrap();
    p
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    csv::Reader::from_path(path)
        .unwrap()
        .records()
        .map(|r| r.unwrap().iter().map(String::from).collect())
        .collect()
}

fn stdout_json(o: &Output) -> Value {
    assert!(
        o.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    serde_json::from_slice(&o.stdout).unwrap()
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let o = imcsynth(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    let o = imcsynth(&["synthesize", "--objective", "sideways"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn module_errors_give_a_json_record() {
    let dir = TempDir::new().unwrap();
    let sys = small_system(dir.path(), 4);
    let out = dir.path().join("out");
    let o = imcsynth(&[
        "synthesize",
        "--config",
        sys.to_str().unwrap(),
        "--dra",
        data("phi1.dra.json").to_str().unwrap(),
        "--eps-thr",
        "1.5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let rec: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(rec["error"]["kind"], "config");

    let bad = dir.path().join("bad.dra.json");
    fs::write(&bad, "{ not json").unwrap();
    let o = imcsynth(&[
        "synthesize",
        "--config",
        sys.to_str().unwrap(),
        "--dra",
        bad.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let rec: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(rec["error"]["kind"], "parse");
}

#[test]
fn synthesize_writes_artifacts_and_stops_below_threshold_or_on_cap() {
    let dir = TempDir::new().unwrap();
    let cfg = run_file(dir.path(), serde_json::json!({}));
    let o = imcsynth(&["synthesize", "--config", cfg.to_str().unwrap()]);
    let summary = stdout_json(&o);
    let out = dir.path().join("out");
    for f in [
        "result.json",
        "run.json",
        "policy.csv",
        "history.csv",
        "partition.csv",
        "verdicts.csv",
    ] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let hist = read_csv(&out.join("history.csv"));
    let last = hist.last().unwrap();
    let eps: f64 = last[3].parse().unwrap();
    let converged: bool = last[10].parse().unwrap();
    assert!(eps <= 0.3 || !converged);
    assert_eq!(summary["converged"], converged);
    let policy = read_csv(&out.join("policy.csv"));
    for row in &policy {
        let (lo, hi): (f64, f64) = (row[3].parse().unwrap(), row[4].parse().unwrap());
        assert!(0.0 <= lo && lo <= hi && hi <= 1.0);
    }
}

#[test]
fn identical_runs_give_identical_csv() {
    let dir = TempDir::new().unwrap();
    let cfg = run_file(dir.path(), serde_json::json!({}));
    let mut snapshots = Vec::new();
    for _ in 0..2 {
        stdout_json(&imcsynth(&[
            "synthesize",
            "--config",
            cfg.to_str().unwrap(),
        ]));
        stdout_json(&imcsynth(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--runs",
            "200",
            "--cells",
            "4",
        ]));
        let out = dir.path().join("out");
        snapshots.push(
            [
                "policy.csv",
                "history.csv",
                "partition.csv",
                "verdicts.csv",
                "simulation.csv",
            ]
            .map(|f| fs::read(out.join(f)).unwrap()),
        );
    }
    assert_eq!(snapshots[0], snapshots[1]);
}

#[test]
fn export_plots_has_monotone_cumulative_time() {
    let dir = TempDir::new().unwrap();
    let cfg = run_file(dir.path(), serde_json::json!({}));
    stdout_json(&imcsynth(&[
        "synthesize",
        "--config",
        cfg.to_str().unwrap(),
    ]));
    stdout_json(&imcsynth(&[
        "export-plots",
        "--config",
        cfg.to_str().unwrap(),
    ]));
    let out = dir.path().join("out");
    let time = read_csv(&out.join("time.csv"));
    let cum: Vec<f64> = time.iter().map(|r| r[2].parse().unwrap()).collect();
    assert!(!cum.is_empty());
    assert!(cum.windows(2).all(|w| w[1] >= w[0]));
    let hist = read_csv(&out.join("history.csv"));
    assert_eq!(read_csv(&out.join("eps_curve.csv")).len(), hist.len());
    assert_eq!(read_csv(&out.join("actions.csv")).len(), hist.len());
    let cells = read_csv(&out.join("partition.csv")).len();
    assert_eq!(read_csv(&out.join("partition_map.csv")).len(), cells * 5);
    for v in read_csv(&out.join("verdicts.csv")) {
        assert!(["green", "yellow", "red"].contains(&v.last().unwrap().as_str()));
    }
}

#[test]
fn simulate_reports_frequencies_in_unit_interval() {
    let dir = TempDir::new().unwrap();
    let cfg = run_file(dir.path(), serde_json::json!({ "max_iters": 1 }));
    stdout_json(&imcsynth(&[
        "synthesize",
        "--config",
        cfg.to_str().unwrap(),
    ]));
    let s = stdout_json(&imcsynth(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--runs",
        "300",
        "--horizon",
        "50",
        "--seed",
        "9",
    ]));
    assert_eq!(s["cells"], 20);
    for row in read_csv(&dir.path().join("out/simulation.csv")) {
        let f: f64 = row[6].parse().unwrap();
        let (a, b): (f64, f64) = (row[7].parse().unwrap(), row[8].parse().unwrap());
        assert!((0.0..=1.0).contains(&f) && a <= f && f <= b);
    }
}

#[test]
fn simulate_without_result_fails_cleanly() {
    let dir = TempDir::new().unwrap();
    let cfg = run_file(dir.path(), serde_json::json!({}));
    let o = imcsynth(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let rec: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(rec["error"]["kind"], "io");
}

#[test]
fn abstract_and_validate_model() {
    let dir = TempDir::new().unwrap();
    let sys = small_system(dir.path(), 4);
    let out = dir.path().join("abs");
    let s = stdout_json(&imcsynth(&[
        "abstract",
        "--config",
        sys.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]));
    assert_eq!(s["cells"], 16);
    let bmdp: Value =
        serde_json::from_str(&fs::read_to_string(out.join("bmdp.json")).unwrap()).unwrap();
    assert!(bmdp.is_object());
    let v = stdout_json(&imcsynth(&[
        "validate-model",
        "--config",
        sys.to_str().unwrap(),
        "--samples",
        "6",
        "--draws",
        "5000",
        "--out",
        out.to_str().unwrap(),
    ]));
    assert_eq!(v["ok"], true);
    assert_eq!(v["row_violations"], 0);
}

#[test]
fn continuous_pipeline_writes_regions() {
    let dir = TempDir::new().unwrap();
    let cfg = run_file(
        dir.path(),
        serde_json::json!({ "pipeline": "continuous", "eps_thr": 1.0, "max_iters": 1 }),
    );
    let s = stdout_json(&imcsynth(&[
        "synthesize",
        "--config",
        cfg.to_str().unwrap(),
    ]));
    assert_eq!(s["iterations"], 1);
    let regions = read_csv(&dir.path().join("out/regions.csv"));
    assert!(!regions.is_empty());
}

#[test]
fn minimizing_complements_bounds() {
    let dir = TempDir::new().unwrap();
    let cfg = run_file(
        dir.path(),
        serde_json::json!({ "eps_thr": 1.0, "max_iters": 1 }),
    );
    stdout_json(&imcsynth(&[
        "synthesize",
        "--config",
        cfg.to_str().unwrap(),
    ]));
    let max = read_csv(&dir.path().join("out/policy.csv"));
    let min_out = dir.path().join("min");
    stdout_json(&imcsynth(&[
        "synthesize",
        "--config",
        cfg.to_str().unwrap(),
        "--objective",
        "min",
        "--out",
        min_out.to_str().unwrap(),
    ]));
    let min = read_csv(&min_out.join("policy.csv"));
    for (a, b) in max.iter().zip(&min) {
        let (alo, ahi): (f64, f64) = (a[3].parse().unwrap(), a[4].parse().unwrap());
        let (blo, bhi): (f64, f64) = (b[3].parse().unwrap(), b[4].parse().unwrap());
        assert!((alo - (1.0 - bhi)).abs() < 1e-9 && (ahi - (1.0 - blo)).abs() < 1e-9);
    }
}
