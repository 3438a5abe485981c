use std::path::Path;
use std::process::{Command, Output};

fn biasguard(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_biasguard"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const CORPUS: &str = r#"{"id": "d0", "text": "Storm reaches the coast tonight, officials said.", "label": 0}
{"id": "d1", "text": "The rigged storm coverage is an outrageous corrupt storm coast farce.", "label": 1}
{"id": "d2", "text": "Budget talks continue in parliament.", "label": 0}
{"id": "d3", "text": "Ferry services resume after the storm.", "label": 0}
{"id": "d4", "text": "Teachers vote on the new contract.", "label": 0}
{"id": "d5", "text": "Energy prices rose again this quarter.", "label": 0}
{"id": "d6", "text": "The vile propaganda about the bridge keeps spreading.", "label": 1}

{"id": "d7", "text": "Hospital nurses report longer shifts.", "label": 0}
{"id": "d8", "text": "Train strike planned for monday.", "label": 0}
{"id": "d9", "text": "Coast guard rescues two sailors near the harbor.", "label": 0}
"#;

fn ingested() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("corpus.jsonl"), CORPUS).unwrap();
    let out = biasguard(dir.path(), &["ingest", "corpus.jsonl", "--out", "index.json"]);
    assert!(out.status.success());
    assert_eq!(stdout(&out).trim(), "ingested 10");
    dir
}

#[test]
fn ingest_reports_count() {
    ingested();
}

#[test]
fn missing_input_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = biasguard(dir.path(), &["ingest", "nope.jsonl", "--out", "index.json"]);
    assert_eq!(out.status.code(), Some(2));
    let out = biasguard(dir.path(), &["query", "--index", "nope.json", "storm"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn duplicate_ids_fail_at_runtime() {
    let dir = tempfile::tempdir().unwrap();
    let dup = "{\"id\": \"a\", \"text\": \"one\"}\n{\"id\": \"a\", \"text\": \"two\"}\n";
    std::fs::write(dir.path().join("dup.jsonl"), dup).unwrap();
    let out = biasguard(dir.path(), &["ingest", "dup.jsonl", "--out", "index.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("duplicate"));

    std::fs::write(dir.path().join("bad.jsonl"), "{\"id\": \"a\", \"text\": \"one\"}\nnot json\n").unwrap();
    let out = biasguard(dir.path(), &["ingest", "bad.jsonl", "--out", "index.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn bad_mode_and_config_are_usage_errors() {
    let dir = ingested();
    let out = biasguard(dir.path(), &["query", "--index", "index.json", "storm", "--mode", "greedy"]);
    assert_eq!(out.status.code(), Some(2));
    let out = biasguard(dir.path(), &["query", "--index", "index.json", "storm", "--beta-min", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(dir.path().join("c.toml"), "k = 3\nunknown_key = 1\n").unwrap();
    let out = biasguard(dir.path(), &["query", "--index", "index.json", "storm", "--config", "c.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn traced_query_is_json() {
    let dir = ingested();
    let out = biasguard(dir.path(), &["query", "--index", "index.json", "storm coast", "--mode", "zero-shot", "--trace"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let trace = v["trace"].as_array().unwrap();
    assert_eq!(trace.first().unwrap()["step"], "QueryReceived");
    assert_eq!(trace.last().unwrap()["step"], "AnswerProduced");
    assert_eq!(v["selected"]["id"], "d0");
    assert_eq!(v["mode"], "zero-shot");

    let plain = biasguard(dir.path(), &["query", "--index", "index.json", "storm coast", "--mode", "no-select"]);
    assert!(plain.status.success());
    assert!(stdout(&plain).contains("source: d1"), "{}", stdout(&plain));
}

#[test]
fn config_file_overrides_defaults() {
    let dir = ingested();
    std::fs::write(dir.path().join("c.toml"), "k = 1\nmax_retries = 1\n").unwrap();
    let out = biasguard(
        dir.path(),
        &["query", "--index", "index.json", "storm coast", "--config", "c.toml", "--trace"],
    );
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let retrieved: Vec<_> = v["trace"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|e| e["step"] == "Retrieved")
        .collect();
    assert!(retrieved.iter().all(|e| e["candidates"].as_array().unwrap().len() == 1));
    assert!(v["retries_used"].as_u64().unwrap() <= 1);
}

#[test]
fn eval_writes_one_row_per_mode() {
    let dir = tempfile::tempdir().unwrap();
    assert!(biasguard(dir.path(), &["synth", "--out", "data", "--topics", "5"]).status.success());
    assert!(biasguard(dir.path(), &["ingest", "data/corpus.jsonl", "--out", "index.json"]).status.success());
    let eval = |out: &str, extra: &[&str]| {
        let mut args = vec!["eval", "--index", "index.json", "--queries", "data/queries.jsonl", "--out", out];
        args.extend_from_slice(extra);
        let o = biasguard(dir.path(), &args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let text = std::fs::read_to_string(dir.path().join(out).join("report.json")).unwrap();
        serde_json::from_str::<serde_json::Value>(&text).unwrap()
    };

    let all = eval("all", &[]);
    let rows = all["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r["n_queries"] == 5));
    for f in ["report.txt", "per_query.csv", "bias_rate.csv", "retry_rate.csv"] {
        assert!(dir.path().join("all").join(f).is_file(), "{f}");
    }

    let one = eval("one", &["--modes", "zero-shot"]);
    let rows = one["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["mode"], "zero-shot");
}

#[test]
fn synth_then_ingest() {
    let dir = tempfile::tempdir().unwrap();
    let out = biasguard(dir.path(), &["synth", "--out", "data", "--topics", "4"]);
    assert!(out.status.success());
    let out = biasguard(dir.path(), &["ingest", "data/corpus.jsonl", "--out", "index.json"]);
    assert_eq!(stdout(&out).trim(), "ingested 20");
    assert_eq!(std::fs::read_to_string(dir.path().join("data/queries.jsonl")).unwrap().lines().count(), 4);
}

#[test]
fn unreachable_classifier_prints_failed_trace() {
    let dir = ingested();
    let dead = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
    let endpoint = format!("http://{dead}");
    let out = biasguard(
        dir.path(),
        &["query", "--index", "index.json", "storm", "--detector", "remote", "--detector-endpoint", &endpoint],
    );
    assert_eq!(out.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["trace"].as_array().unwrap().last().unwrap()["step"], "RunFailed");

    let out = biasguard(dir.path(), &["query", "--index", "index.json", "storm", "--detector", "remote"]);
    assert_eq!(out.status.code(), Some(2));
}
