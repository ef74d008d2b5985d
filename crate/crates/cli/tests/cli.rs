use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vdmfpca"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn toy() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/toy.csv")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_csv(path: &Path) -> Vec<BTreeMap<String, String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let headers = r.headers().unwrap().clone();
    r.records()
        .map(|rec| {
            headers
                .iter()
                .zip(rec.unwrap().iter())
                .map(|(h, v)| (h.to_string(), v.to_string()))
                .collect()
        })
        .collect()
}

#[test]
fn simulate_is_reproducible_and_complete() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = run(&[
            "simulate",
            "--n",
            "5",
            "--sigma",
            "0.1",
            "--seed",
            "9",
            "--out",
            s(out),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let data_a = std::fs::read(a.join("data.csv")).unwrap();
    assert_eq!(data_a, std::fs::read(b.join("data.csv")).unwrap());
    assert_eq!(
        std::fs::read(a.join("truth.json")).unwrap(),
        std::fs::read(b.join("truth.json")).unwrap()
    );

    let rows = read_csv(&a.join("data.csv"));
    let ids: BTreeSet<&str> = rows.iter().map(|r| r["subject_id"].as_str()).collect();
    assert_eq!(ids.len(), 5);
    let truth: serde_json::Value =
        serde_json::from_slice(&std::fs::read(a.join("truth.json")).unwrap()).unwrap();
    let expected: u64 = truth["subjects"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| 2 * s["domain_length"].as_u64().unwrap())
        .sum();
    assert_eq!(rows.len() as u64, expected);
}

#[test]
fn fit_writes_every_artifact_and_round_trips() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("fit");
    let o = run(&["fit", "--data", s(&toy()), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "eigenfunctions.csv",
        "scores.csv",
        "variance_explained.csv",
        "spearman.csv",
        "manifest.json",
    ] {
        assert!(out.join(f).exists(), "{f} missing");
    }

    let mut by_t: BTreeMap<String, f64> = BTreeMap::new();
    for r in read_csv(&out.join("variance_explained.csv")) {
        *by_t.entry(r["T"].clone()).or_default() += r["share"].parse::<f64>().unwrap();
    }
    assert!(!by_t.is_empty());
    assert!(by_t.values().all(|&v| v <= 1.0 + 1e-12));

    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "fit");
    assert!(manifest["details"]["m"].as_u64().unwrap() >= 1);
    assert_eq!(manifest["details"]["k"].as_object().unwrap().len(), 2);

    let again = dir.path().join("again");
    let o = run(&[
        "fit",
        "--data",
        s(&toy()),
        "--config",
        s(&out.join("manifest.json")),
        "--out",
        s(&again),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read_to_string(out.join("scores.csv")).unwrap(),
        std::fs::read_to_string(again.join("scores.csv")).unwrap()
    );
}

#[test]
fn malformed_rows_report_their_line() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("bad.csv");
    std::fs::write(
        &data,
        "subject_id,variable,time,value\na,X1,1,0.5\na,X1,2,oops\n",
    )
    .unwrap();
    let o = run(&["fit", "--data", s(&data), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn sparse_subjects_are_excluded_and_counted() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"min_obs": 30}"#).unwrap();
    let out = dir.path().join("o");
    let o = run(&[
        "fit",
        "--data",
        s(&toy()),
        "--config",
        s(&cfg),
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    let excluded = manifest["details"]["load"]["below_min_obs"]
        .as_array()
        .unwrap()
        .len();
    let kept = manifest["details"]["n_subjects"].as_u64().unwrap() as usize;
    assert!(excluded > 0);
    assert_eq!(excluded + kept, 20);
    assert!(String::from_utf8_lossy(&o.stderr).contains(&format!("excluded {excluded}")));
}

#[test]
fn invalid_config_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"pve_univariate": 1.5}"#).unwrap();
    let o = run(&[
        "fit",
        "--data",
        s(&toy()),
        "--config",
        s(&cfg),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    std::fs::write(&cfg, r#"{"no_such_key": 1}"#).unwrap();
    let o = run(&[
        "fit",
        "--data",
        s(&toy()),
        "--config",
        s(&cfg),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

fn small_scenarios(dir: &Path, n: usize) -> PathBuf {
    let p = dir.join("scenarios.json");
    std::fs::write(
        &p,
        format!(r#"{{"scenarios": [{{"n": {n}, "domain_dist": "uniform", "sigma": 0.1}}]}}"#),
    )
    .unwrap();
    p
}

#[test]
fn benchmark_rows_summary_and_parallel_equivalence() {
    let dir = TempDir::new().unwrap();
    let sc = small_scenarios(dir.path(), 40);
    let one = dir.path().join("j1/results.csv");
    let many = dir.path().join("j8/results.csv");
    for (out, jobs) in [(&one, "1"), (&many, "8")] {
        let o = run(&[
            "benchmark",
            "--scenarios",
            s(&sc),
            "--replicates",
            "2",
            "--jobs",
            jobs,
            "--seed",
            "5",
            "--out",
            s(out),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(std::fs::read(&one).unwrap(), std::fs::read(&many).unwrap());

    let rows = read_csv(&one);
    let mut groups: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for r in &rows {
        assert_ne!(r["metric"], "error");
        groups
            .entry(format!("{}{}", r["method"], r["n_bins"]))
            .or_default()
            .insert(r["replicate"].clone());
    }
    assert_eq!(groups.len(), 3);
    assert!(groups.values().all(|reps| reps.len() == 2));

    let cell: Vec<f64> = rows
        .iter()
        .filter(|r| r["method"] == "VD-MFPCA" && r["metric"] == "ARMSE_X" && r["variable"] == "X1")
        .map(|r| r["value"].parse().unwrap())
        .collect();
    assert_eq!(cell.len(), 2);
    let summary = read_csv(&dir.path().join("j1/results_summary.csv"));
    let row = summary
        .iter()
        .find(|r| r["metric"] == "ARMSE_X" && r["variable"] == "X1")
        .unwrap();
    let mean: f64 = row["VD-MFPCA"].split(' ').next().unwrap().parse().unwrap();
    assert!((mean - (cell[0] + cell[1]) / 2.0).abs() < 5e-5);
    assert!(dir.path().join("j1/results_manifest.json").exists());
}

#[test]
fn failing_replicates_are_recorded_and_fail_the_run() {
    let dir = TempDir::new().unwrap();
    // Too few subjects to smooth the score covariance.
    let sc = small_scenarios(dir.path(), 8);
    let out = dir.path().join("results.csv");
    let o = run(&[
        "benchmark",
        "--scenarios",
        s(&sc),
        "--replicates",
        "2",
        "--jobs",
        "2",
        "--seed",
        "1",
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(4));
    let rows = read_csv(&out);
    let errors = rows
        .iter()
        .filter(|r| r["metric"] == "error" && r["method"] == "VD-MFPCA")
        .count();
    assert_eq!(errors, 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("replicate 0"));
}
