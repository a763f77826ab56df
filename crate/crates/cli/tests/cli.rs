use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn semiflow(args: &[&str], seed_env: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_semiflow"));
    cmd.args(args).env("RUST_LOG", "warn").env_remove("SEMIFLOW_SEED");
    if let Some(s) = seed_env {
        cmd.env("SEMIFLOW_SEED", s);
    }
    cmd.output().expect("binary runs")
}

fn summary(out: &Output) -> Value {
    assert!(out.status.success(), "failed: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json summary")
}

fn small_search(dir: &Path, extra: &[&str], seed_env: Option<&str>) -> Value {
    let mut args = vec!["search", "--data", "two_spirals", "--set", "data.n=600", "--set", "final.max_epochs=3", "--out"];
    args.push(dir.to_str().unwrap());
    args.extend_from_slice(extra);
    summary(&semiflow(&args, seed_env))
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = semiflow(&["search", "--data", "two_spirals", "--set", "search.particlez=3", "--out", dir.path().to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    let out = semiflow(&["search", "--out", dir.path().to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2), "missing data source");
}

#[test]
fn divergence_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("huge.csv");
    let rows: String = (0..400).map(|i| format!("{},{:e},{:e}\n", i % 2, (i as f64 - 200.0) * 5e302, (i as f64 * 7.0 % 13.0 - 6.0) * 1e304)).collect();
    std::fs::write(&csv, rows).unwrap();
    let out = semiflow(&["search", "--data", csv.to_str().unwrap(), "--out", dir.path().join("run").to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn search_writes_consistent_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let s = small_search(dir.path(), &["--seed", "4"], None);
    for f in ["manifest.json", "metrics.csv", "best.json", "morphisms.jsonl"] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
    let audit = std::fs::read_to_string(dir.path().join("morphisms.jsonl")).unwrap();
    assert_eq!(audit.lines().count() + 1, s["architectures_explored"].as_u64().unwrap() as usize);
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert!(manifest["finished_unix"].is_number());

    let ev = summary(&semiflow(
        &[
            "eval",
            "--from-manifest",
            dir.path().join("manifest.json").to_str().unwrap(),
            "--checkpoint",
            dir.path().join("best.json").to_str().unwrap(),
        ],
        None,
    ));
    assert_eq!(ev["accuracy"], s["final_report"]["test"]["accuracy"]);
    assert_eq!(ev["loss"], s["final_report"]["test"]["loss"]);
}

#[test]
fn seed_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let a = small_search(&dir.path().join("a"), &[], Some("11"));
    assert_eq!(a["seed"], 11);
    let b = small_search(&dir.path().join("b"), &["--seed", "12"], Some("11"));
    assert_eq!(b["seed"], 12);
    let manifest = dir.path().join("a/manifest.json");
    let out = semiflow(&["search", "--from-manifest", manifest.to_str().unwrap(), "--out", dir.path().join("c").to_str().unwrap()], Some("99"));
    let c = summary(&out);
    assert_eq!(c["seed"], 11);
    assert_eq!(
        std::fs::read(dir.path().join("a/metrics.csv")).unwrap(),
        std::fs::read(dir.path().join("c/metrics.csv")).unwrap()
    );
}

fn bench(dir: &Path, sets: &[&str]) -> Value {
    let mut args = vec!["dynamics-bench", "--out", dir.to_str().unwrap()];
    for s in sets {
        args.extend(["--set", s]);
    }
    summary(&semiflow(&args, None))
}

#[test]
fn bench_single_node_is_static() {
    let dir = tempfile::tempdir().unwrap();
    let s = bench(dir.path(), &["bench.values=[0.7]", "bench.steps=200"]);
    let run = &s["runs"][0];
    assert_eq!(run["total_moved"], 0.0);
    assert_eq!(run["final_f"], serde_json::json!([1.0]));
}

#[test]
fn bench_sampled_matches_expected() {
    let dir = tempfile::tempdir().unwrap();
    let common = ["bench.values=[0.3,0.1,0.5]", "bench.topology=\"complete\"", "bench.particles=10000"];
    let mut sampled = common.to_vec();
    sampled.push("dynamics.rate_mode=\"sampled\"");
    let mut expected = common.to_vec();
    expected.push("dynamics.rate_mode=\"expected\"");
    let a = bench(&dir.path().join("s"), &sampled);
    let b = bench(&dir.path().join("e"), &expected);
    let fa: Vec<f64> = serde_json::from_value(a["runs"][0]["final_f"].clone()).unwrap();
    let fb: Vec<f64> = serde_json::from_value(b["runs"][0]["final_f"].clone()).unwrap();
    let l1: f64 = fa.iter().zip(&fb).map(|(x, y)| (x - y).abs()).sum();
    assert!(l1 <= 0.05, "sampled {fa:?} vs expected {fb:?}");
    assert!(b["runs"][0]["l1_to_oracle"].as_f64().unwrap() < 1e-6);
    let csv = std::fs::read_to_string(dir.path().join("s/bench_kappa1_beta1_gamma0.csv")).unwrap();
    assert!(csv.starts_with("iter,energy,moved,f0,f1,f2"));
}

#[test]
fn graph_dump_lists_the_local_graph() {
    let s = summary(&semiflow(&["graph-dump", "--data", "two_spirals", "--set", "data.n=200"], None));
    assert_eq!(s["nodes"].as_array().unwrap().len(), 9);
    assert_eq!(s["edges"].as_array().unwrap().len(), 8);
}
