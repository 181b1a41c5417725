use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn reclaim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reclaim"))
        .args(args)
        .env_remove("RECLAIM_API_KEY")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn run_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn generate_is_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let examples = data("examples.jsonl");
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for out in [&a, &b] {
        let o = reclaim(&["generate", "--input", p(&examples), "--output", p(out), "--seed", "7"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(
        std::fs::read(dir.path().join("a.manifest.jsonl")).unwrap(),
        std::fs::read(dir.path().join("b.manifest.jsonl")).unwrap()
    );
    let info_a = run_json(&dir.path().join("a.run.json"));
    let info_b = run_json(&dir.path().join("b.run.json"));
    assert_eq!(info_a["config_digest"], info_b["config_digest"]);
    assert_eq!(info_a["input_sha256"], info_b["input_sha256"]);
}

#[test]
fn flags_override_file_and_file_overrides_defaults() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[generation]\nseed = 11\nmax_pairs = 4\n").unwrap();
    let out = dir.path().join("a.jsonl");
    let o = reclaim(&[
        "--config",
        p(&cfg),
        "generate",
        "--input",
        p(&data("examples.jsonl")),
        "--output",
        p(&out),
        "--seed",
        "99",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let info = run_json(&dir.path().join("a.run.json"));
    let g = &info["effective_config"]["generation"];
    assert_eq!(g["seed"], 99);
    assert_eq!(g["max_pairs"], 4);
    assert_eq!(g["min_pairs"], 2);
}

#[test]
fn different_seeds_change_the_digest() {
    let dir = TempDir::new().unwrap();
    let examples = data("examples.jsonl");
    let mut digests = Vec::new();
    for seed in ["1", "2"] {
        let out = dir.path().join(format!("{seed}.jsonl"));
        let o = reclaim(&["generate", "--input", p(&examples), "--output", p(&out), "--seed", seed]);
        assert!(o.status.success());
        digests.push(run_json(&dir.path().join(format!("{seed}.run.json")))["config_digest"].clone());
    }
    assert_ne!(digests[0], digests[1]);
}

#[test]
fn inverted_pair_bounds_are_a_validation_error() {
    let dir = TempDir::new().unwrap();
    let o = reclaim(&[
        "generate",
        "--input",
        p(&data("examples.jsonl")),
        "--output",
        p(&dir.path().join("a.jsonl")),
        "--min-pairs",
        "5",
        "--max-pairs",
        "2",
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("min_pairs"));
}

#[test]
fn unknown_config_keys_are_listed() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[generation]\nseeed = 1\n[backends.nli]\nkind = \"containment\"\nthreshhold = 0.4\n").unwrap();
    let o = reclaim(&["--config", p(&cfg), "stats", "--input", p(&data("raw.jsonl"))]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("generation.seeed"), "{err}");
    assert!(err.contains("backends.nli.threshhold"), "{err}");
}

#[test]
fn missing_config_file_is_reported() {
    let o = reclaim(&["--config", "/nonexistent/run.toml", "stats", "--input", "x.jsonl"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/run.toml"));
}

#[test]
fn unreachable_backend_exits_with_unavailable_and_keeps_partial_traces() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[backends.refer]\nkind = \"unreachable\"\n").unwrap();
    let out = dir.path().join("a.jsonl");
    let o = reclaim(&["--config", p(&cfg), "generate", "--input", p(&data("examples.jsonl")), "--output", p(&out)]);
    assert_eq!(o.status.code(), Some(4));
    let manifest = std::fs::read_to_string(dir.path().join("a.manifest.jsonl")).unwrap();
    for line in manifest.lines() {
        let rec: Value = serde_json::from_str(line).unwrap();
        assert!(rec["error"].as_str().unwrap().contains("unreachable"));
        assert!(rec["trace"].is_object());
    }
}

#[test]
fn dataset_pipeline_runs_and_resumes() {
    let dir = TempDir::new().unwrap();
    let raw = data("raw.jsonl");
    let built = dir.path().join("train.jsonl");
    let o = reclaim(&["build-dataset", "--input", p(&raw), "--output", p(&built)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(&built).unwrap().lines().count(), 2);

    // a second run finds every id done and appends nothing
    let o = reclaim(&["build-dataset", "--input", p(&raw), "--output", p(&built)]);
    assert!(o.status.success());
    assert_eq!(std::fs::read_to_string(&built).unwrap().lines().count(), 2);

    // an unreachable judge leaves everything pending, then a healthy run finishes
    let cfg = dir.path().join("down.toml");
    std::fs::write(&cfg, "[backends.nli]\nkind = \"unreachable\"\n").unwrap();
    let kept = dir.path().join("kept.jsonl");
    let o = reclaim(&["--config", p(&cfg), "filter", "--input", p(&built), "--output", p(&kept)]);
    assert_eq!(o.status.code(), Some(4));
    assert_eq!(std::fs::read_to_string(&kept).unwrap_or_default().lines().count(), 0);
    let o = reclaim(&["filter", "--input", p(&built), "--output", p(&kept)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = run_json(&dir.path().join("kept.report.json"));
    assert_eq!(report["input_count"], 2);
    assert_eq!(report["kept_count"], 1);
    assert_eq!(report["removed_nli_fail"], 1);
    let removed = std::fs::read_to_string(dir.path().join("kept.removed.jsonl")).unwrap();
    assert!(removed.contains("\"r2\""));

    let split = dir.path().join("claims.jsonl");
    let o = reclaim(&["claim-split", "--input", p(&kept), "--output", p(&split)]);
    assert!(o.status.success());
    let lines: Vec<Value> = std::fs::read_to_string(&split)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0]["input_text"].as_str().unwrap().ends_with("</reference>"));

    let o = reclaim(&["stats", "--input", p(&kept), "--exact"]);
    assert!(o.status.success());
    let stats: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(stats["samples"], 1);
    assert_eq!(stats["avg_answer_words"], "14");
    assert_eq!(stats["avg_passage_words"], "10");
}

#[test]
fn evaluate_writes_summary_and_table() {
    let dir = TempDir::new().unwrap();
    let examples = data("examples.jsonl");
    let answers = dir.path().join("a.jsonl");
    assert!(reclaim(&["generate", "--input", p(&examples), "--output", p(&answers)]).status.success());
    let summary = dir.path().join("summary.json");
    let table = dir.path().join("table.txt");
    let o = reclaim(&[
        "evaluate",
        "--examples",
        p(&examples),
        "--answers",
        p(&answers),
        "--summary",
        p(&summary),
        "--table",
        p(&table),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = run_json(&summary);
    // constrained references always come verbatim from the passages
    assert_eq!(s["cr"]["mean"], 1.0);
    assert_eq!(s["ar"]["mean"], 1.0);
    assert!(s["mauve"].is_null());
    assert_eq!(std::fs::read_to_string(&table).unwrap(), String::from_utf8_lossy(&o.stdout));
}

#[test]
fn trie_dump_lists_every_sentence() {
    let o = reclaim(&["trie", "dump", "--input", p(&data("examples.jsonl")), "--id", "q2"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.starts_with("# q2\n"));
    assert_eq!(text.lines().count(), 6);
    assert!(text.contains("Short wavelengths scatter strongly."));

    let o = reclaim(&["trie", "dump", "--input", p(&data("examples.jsonl")), "--id", "nope"]);
    assert_eq!(o.status.code(), Some(2));
}
