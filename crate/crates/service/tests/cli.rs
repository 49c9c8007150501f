use std::path::Path;

use clap::Parser;
use whittle_service::cli::{run, Cli};

fn whittle(args: &[&str]) -> String {
    let cli = Cli::try_parse_from(std::iter::once("whittle").chain(args.iter().copied())).unwrap();
    let mut out = Vec::new();
    run(cli, &mut out).unwrap();
    String::from_utf8(out).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn synth_train_index_simulate_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.json");
    let model = dir.path().join("model.json");
    let trees = dir.path().join("trees.json");

    let s = whittle(&["synth", "--out", p(&data), "--n", "120", "--d", "5", "--m", "3", "--pairs", "150", "--seed", "2"]);
    assert!(s.contains("wrote 120 images, 450 comparisons"), "{s}");

    let s = whittle(&["train", "--dataset", p(&data), "--out", p(&model), "--epochs", "200"]);
    assert_eq!(s.lines().count(), 3);
    assert!(s.contains("violation rate"));

    let s = whittle(&["index", "--dataset", p(&data), "--model", p(&model), "--out", p(&trees)]);
    assert_eq!(s.lines().count(), 3);
    assert!(s.lines().all(|l| l.contains("120 nodes, depth 7")), "{s}");

    let config = dir.path().join("exp.json");
    let cfg = serde_json::json!({
        "dataset": {"files": {"dataset": data, "model": model, "index": trees}},
        "policies": ["ACTIVE_PIVOTS", "PASSIVE"],
        "queries": 4,
        "iterations": 3,
        "seed": 5
    });
    std::fs::write(&config, cfg.to_string()).unwrap();

    let s = whittle(&["simulate", "--config", p(&config), "--policy", "active_pivots", "--target", "9"]);
    assert!(s.starts_with("policy ACTIVE_PIVOTS, target 9"), "{s}");
    // header, policy line and iterations 0..=3
    assert_eq!(s.lines().count(), 6, "{s}");

    let report = dir.path().join("report");
    let s = whittle(&["evaluate", "--config", p(&config), "--out", p(&report)]);
    assert_eq!(s.lines().filter(|l| l.contains("mean percentile")).count(), 2, "{s}");
    let csv = std::fs::read_to_string(report.join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 4);
    let curves: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(report.join("curves.json")).unwrap()).unwrap();
    assert!(curves.is_object() || curves.is_array());
}

#[test]
fn bad_arguments_are_rejected() {
    assert!(Cli::try_parse_from(["whittle", "serve"]).is_err());
    assert!(Cli::try_parse_from(["whittle", "serve", "--synthetic", "50", "--dataset", "x.json"]).is_err());
    assert!(Cli::try_parse_from(["whittle", "serve", "--synthetic", "50"]).is_ok());
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("exp.json");
    std::fs::write(&config, r#"{"dataset": {"synthetic": {"n": 30, "d": 3, "m": 2, "c": 2, "pairs_per_attribute": 40, "seed": 0}}, "policies": ["TOP"], "queries": 1, "iterations": 1}"#).unwrap();
    let cli = Cli::try_parse_from(["whittle", "simulate", "--config", p(&config), "--policy", "SIDEWAYS"]).unwrap();
    assert!(run(cli, &mut Vec::new()).is_err());
}
