use std::path::Path;
use std::process::{Command, Output};

fn nextpoi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nextpoi")).args(args).env_remove("RUST_LOG").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = nextpoi(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn jsonl(path: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn full_pipeline_on_synthetic_data() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let raw = d.join("raw.tsv");
    let proc = d.join("proc");
    let cb = d.join("codebook.json");
    let recs = d.join("test.jsonl");

    ok(&["synth", "--out", p(&raw), "--users", "20"]);
    let table = ok(&["ingest", "--input", p(&raw), "--out", p(&proc)]);
    assert!(table.contains("Users") && table.contains("Check-ins"));
    assert!(proc.join("ingest.manifest.json").is_file());
    ok(&["build-sids", "--processed", p(&proc), "--out", p(&cb)]);
    ok(&["gen-knowledge", "--processed", p(&proc), "--city", "New York", "--workers", "3"]);
    assert_eq!(jsonl(&proc.join("hotspots.jsonl")).len(), 20);
    ok(&["build-prompts", "--split", "test", "--features", p(&proc), "--codebook", p(&cb), "--out", p(&recs)]);
    let records = jsonl(&recs);
    assert!(!records.is_empty());
    assert!(records.iter().all(|r| r["input"].as_str().unwrap().contains("<user_preference>")));

    let oracle = d.join("oracle.jsonl");
    let lines: Vec<String> = records
        .iter()
        .map(|r| serde_json::json!({ "record_id": r["meta"]["record_id"], "candidates": [r["output"]] }).to_string())
        .collect();
    std::fs::write(&oracle, lines.join("\n")).unwrap();
    let report = d.join("report.json");
    let printed = ok(&[
        "evaluate", "--predictions", p(&oracle), "--records", p(&recs), "--codebook", p(&cb), "--catalog", p(&proc.join("pois.jsonl")),
        "--k", "1,5", "--report-out", p(&report), "--cdf-out", p(&d.join("cdf.tsv")),
    ]);
    assert!(printed.contains("HR@K"));
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(rep["hr"]["1"], 1.0);

    let replayed = ok(&["replay-agent", "--transcript", p(&proc.join("transcripts.jsonl"))]);
    assert_eq!(replayed.lines().filter(|l| l.contains("\tidentical\t")).count(), 20);

    // replaying recorded transcripts reproduces the hotspot texts
    let again = d.join("again");
    ok(&["gen-knowledge", "--processed", p(&proc), "--city", "New York", "--mock-transcripts", p(&proc), "--out", p(&again)]);
    assert_eq!(std::fs::read(again.join("hotspots.jsonl")).unwrap(), std::fs::read(proc.join("hotspots.jsonl")).unwrap());

    let audit = d.join("audit.jsonl");
    ok(&["sample-audit", "--knowledge", p(&proc.join("hotspots.jsonl")), "--n", "5", "--seed", "1", "--out", p(&audit)]);
    assert_eq!(jsonl(&audit).len(), 5);
    let stats = ok(&["stats", "--processed", p(&proc), "--json"]);
    let stats: serde_json::Value = serde_json::from_str(&stats).unwrap();
    assert_eq!(stats["n_users"], 20);
}

#[test]
fn exit_codes_follow_the_failure_class() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(nextpoi(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(nextpoi(&["--help"]).status.code(), Some(0));

    let out = nextpoi(&["build-prompts", "--split", "test", "--features", p(d), "--codebook", p(&d.join("missing.json")), "--out", p(&d.join("x"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("run build-sids"));

    let out = nextpoi(&["build-sids", "--processed", p(d), "--out", p(&d.join("cb.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("run ingest"));

    let cfg = d.join("bad.conf");
    std::fs::write(&cfg, "llm_api_key = secret\n").unwrap();
    assert_eq!(nextpoi(&["--config", p(&cfg), "stats", "--processed", p(d)]).status.code(), Some(1));
}

#[test]
fn http_backend_without_environment_is_a_backend_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let raw = d.join("raw.tsv");
    ok(&["synth", "--out", p(&raw), "--users", "3"]);
    ok(&["ingest", "--input", p(&raw), "--out", p(&d.join("proc"))]);
    let out = Command::new(env!("CARGO_BIN_EXE_nextpoi"))
        .args(["gen-knowledge", "--processed", p(&d.join("proc")), "--city", "NYC", "--backend", "http"])
        .env_remove("NEXTPOI_LLM_ENDPOINT")
        .env_remove("NEXTPOI_LLM_API_KEY")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("NEXTPOI_LLM_ENDPOINT"));
}
