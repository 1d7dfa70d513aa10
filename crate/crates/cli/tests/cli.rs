use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use grandag::Dag;
use serde_json::Value;

fn grandag(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_grandag"))
        .args(args)
        .env_remove("GRANDAG_OUT")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = grandag(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn error_json(args: &[&str]) -> Value {
    let out = grandag(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let line = String::from_utf8(out.stderr).unwrap();
    serde_json::from_str(line.lines().last().unwrap()).expect("stderr is JSON")
}

fn json_file(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn generate(dir: &Path, nodes: &str, samples: &str, seed: &str) {
    ok(&["generate", "--nodes", nodes, "--edges", nodes, "--samples", samples, "--seed", seed, "--out", s(dir)]);
}

#[test]
fn generate_writes_a_consistent_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    generate(&a, "10", "1000", "7");
    let truth = Dag::parse_any(&fs::read_to_string(a.join("truth.txt")).unwrap()).unwrap();
    assert_eq!(truth.d(), 10);
    let data = fs::read_to_string(a.join("data.csv")).unwrap();
    assert_eq!(data.lines().count(), 1000);
    assert!(data.lines().all(|l| l.split(',').count() == 10));

    let meta = json_file(&a.join("meta.json"));
    assert_eq!(meta["scheme"], "gauss-anm");
    assert_eq!(meta["truth_file"], "truth.txt");
    for node in meta["generation"]["nodes"].as_array().unwrap() {
        if node["parents"].as_array().unwrap().is_empty() {
            continue;
        }
        let v = node["noise_variance"].as_f64().unwrap();
        assert!((0.4..=0.8).contains(&v), "{v}");
    }

    let b = tmp.path().join("b");
    generate(&b, "10", "1000", "7");
    for f in ["data.csv", "truth.txt", "meta.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn generate_rejects_conflicting_graph_flags() {
    let e = error_json(&["generate", "--graph", "sf", "--nodes", "5", "--edges", "7"]);
    assert_eq!(e["error"], "usage");
    let e = error_json(&["generate", "--nodes", "4", "--edges", "20"]);
    assert_eq!(e["error"], "usage");
}

#[test]
fn train_outputs_and_config_replay() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("data");
    generate(&d, "10", "300", "1");
    let data = d.join("data.csv");
    let run = tmp.path().join("run");
    ok(&["train", "--data", s(&data), "--seed", "3", "--out", s(&run), "--max-iter", "20000"]);
    for f in ["run_config.json", "estimate.txt", "thresholded.txt", "trajectory.csv", "prune.json", "checkpoint.json", "summary.json"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    // ten nodes is below the neighbour-selection threshold
    assert!(!run.join("pns.json").exists());
    assert_eq!(json_file(&run.join("summary.json"))["pns_applied"], false);
    let est = Dag::parse_any(&fs::read_to_string(run.join("estimate.txt")).unwrap()).unwrap();
    let raw = Dag::parse_any(&fs::read_to_string(run.join("thresholded.txt")).unwrap()).unwrap();
    assert!(est.edges().iter().all(|&(i, j)| raw.has_edge(i, j)));
    let rc = json_file(&run.join("run_config.json"));
    assert_eq!(rc["train"]["max_iter"], 20000);
    assert_eq!(rc["train"]["seed"], 3);

    // replaying the stored configuration reproduces the outputs
    let replay = tmp.path().join("replay");
    ok(&["train", "--config", s(&run.join("run_config.json")), "--out", s(&replay)]);
    for f in ["estimate.txt", "trajectory.csv", "checkpoint.json"] {
        assert_eq!(fs::read(run.join(f)).unwrap(), fs::read(replay.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn config_file_overrides_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("data");
    generate(&d, "3", "200", "2");
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"train": {"max_iter": 300, "hidden": [4]}}"#).unwrap();
    let run = tmp.path().join("run");
    ok(&["train", "--data", s(&d.join("data.csv")), "--max-iter", "100", "--eval-period", "50", "--config", s(&cfg), "--out", s(&run)]);
    let rc = json_file(&run.join("run_config.json"));
    assert_eq!(rc["train"]["max_iter"], 300);
    assert_eq!(rc["train"]["eval_period"], 50);
    assert_eq!(rc["train"]["hidden"], serde_json::json!([4]));
}

#[test]
fn grandag_plus_plus_learns_variances() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("data");
    generate(&d, "3", "200", "4");
    let run = tmp.path().join("run");
    ok(&["train", "--data", s(&d.join("data.csv")), "--method", "grandag++", "--max-iter", "2000", "--out", s(&run)]);
    let ckpt = json_file(&run.join("checkpoint.json"));
    assert_eq!(ckpt["architecture"]["head"], "mean-log-variance");
    assert_eq!(json_file(&run.join("run_config.json"))["method"], "grandag++");
}

#[test]
fn train_reports_shape_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.csv");
    fs::write(&bad, "1,2,3\n4,5\n").unwrap();
    let e = error_json(&["train", "--data", s(&bad), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(e["error"], "input");
    assert!(e["message"].as_str().unwrap().contains("fields"));
    assert_eq!(error_json(&["train"])["error"], "usage");
}

#[test]
fn evaluate_identical_random_and_cyclic() {
    let tmp = tempfile::tempdir().unwrap();
    let g = tmp.path().join("g.txt");
    fs::write(&g, "d=4\n0 1\n1 2\n0 3\n").unwrap();
    let r: Value = serde_json::from_str(&ok(&["evaluate", "--true", s(&g), "--est", s(&g)])).unwrap();
    assert_eq!((r["shd"].as_u64(), r["shd_c"].as_u64(), r["sid"].as_u64()), (Some(0), Some(0), Some(0)));
    assert!(r["provenance"]["true"].is_string());

    let a: Value = serde_json::from_str(&ok(&["evaluate", "--true", s(&g), "--est", "random", "--seed", "5"])).unwrap();
    let b: Value = serde_json::from_str(&ok(&["evaluate", "--true", s(&g), "--est", "random", "--seed", "5"])).unwrap();
    assert_eq!(a, b);
    assert_eq!(a["provenance"]["random_seed"], 5);

    let adj = tmp.path().join("adj.csv");
    fs::write(&adj, "0,1,0,1\n0,0,1,0\n0,0,0,0\n0,0,0,0\n").unwrap();
    let out = tmp.path().join("m.json");
    ok(&["evaluate", "--true", s(&g), "--est", s(&adj), "--metrics", "shd", "--out", s(&out)]);
    assert_eq!(json_file(&out)["shd"], 0);

    let cyclic = tmp.path().join("c.txt");
    fs::write(&cyclic, "d=4\n0 1\n1 0\n").unwrap();
    let e = error_json(&["evaluate", "--true", s(&g), "--est", s(&cyclic), "--metrics", "sid"]);
    assert_eq!(e["error"], "cyclic-graph");
    assert!(e["message"].as_str().unwrap().contains("cycle"));
}

#[test]
fn hpsearch_persists_the_trial_table() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("data");
    ok(&["generate", "--scheme", "lin", "--nodes", "4", "--edges", "4", "--samples", "300", "--seed", "1", "--out", s(&d)]);
    let out = tmp.path().join("hp");
    let summary: Value = serde_json::from_str(
        ok(&["hpsearch", "--data", s(&d.join("data.csv")), "--method", "linear", "--trials", "3", "--seed", "10",
             "--true", s(&d.join("truth.txt")), "--out", s(&out)])
        .trim(),
    )
    .unwrap();
    let table = grandag::hpsearch::read_trial_table(fs::File::open(out.join("trials.csv")).unwrap()).unwrap();
    assert_eq!(table.len(), 3);
    assert_eq!(table.iter().map(|t| t.seed).collect::<Vec<_>>(), vec![10, 11, 12]);
    let best = grandag::hpsearch::select_best(&table).unwrap();
    assert_eq!(summary["best_trial"], best);
    assert!(out.join("estimate.txt").exists() && out.join("metrics.json").exists());
    assert_eq!(json_file(&out.join("run_config.json"))["seed"], 10 + best as u64);
}

#[test]
fn benchmark_aggregates_per_seed_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("bench");
    ok(&["benchmark", "--suite", "er1-d4", "--scheme", "lin", "--method", "linear", "--samples", "200", "--seeds", "3",
         "--out", s(&out)]);
    let report = json_file(&out.join("benchmark.json"));
    assert_eq!(report["seeds"].as_array().unwrap().len(), 3);
    let shd: Vec<f64> = (0..3)
        .map(|k| json_file(&out.join(format!("seed{k}/metrics.json")))["shd"].as_f64().unwrap())
        .collect();
    let mean = shd.iter().sum::<f64>() / 3.0;
    let std = (shd.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 2.0).sqrt();
    assert!((report["aggregate"]["shd"]["mean"].as_f64().unwrap() - mean).abs() < 1e-12);
    assert!((report["aggregate"]["shd"]["std"].as_f64().unwrap() - std).abs() < 1e-12);
    assert!(out.join("aggregate.csv").exists());
    assert!(out.join("seed0/run/run_config.json").exists());
    assert_eq!(error_json(&["benchmark", "--suite", "tree-d4"])["error"], "usage");
}

#[test]
fn output_root_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_grandag"))
        .args(["generate", "--nodes", "3", "--samples", "20", "--seed", "9"])
        .env("GRANDAG_OUT", tmp.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(tmp.path().join("data-gauss-anm-seed9/data.csv").exists());
}
