//! Subcommand-level tests driven through the compiled binary.

use std::path::{Path, PathBuf};
use std::process::Command;

use realign_core::corpus::{load_dataset, save_dataset, Dataset, InstructionRecord};
use realign_core::gateway::{DecodingParams, GatewayConfig, GatewayRequest, ReplayCache};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_realign"))
}

fn criteria_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../criteria")
}

fn write_dataset(path: &Path, rows: &[(&str, &str, &str)]) {
    let dataset = Dataset::new(
        "t",
        rows.iter()
            .map(|(id, q, r)| InstructionRecord::new(*id, *q, *r))
            .collect(),
    );
    save_dataset(&dataset, path).unwrap();
}

#[test]
fn sample_mix_is_deterministic_across_invocations() {
    let tmp = tempfile::tempdir().unwrap();
    let original = tmp.path().join("orig.jsonl");
    let realigned = tmp.path().join("real.jsonl");
    let rows: Vec<(String, String, String)> = (0..40)
        .map(|i| (format!("id{i}"), format!("q{i}"), format!("orig response {i}")))
        .collect();
    write_dataset(
        &original,
        &rows.iter().map(|(a, b, c)| (a.as_str(), b.as_str(), c.as_str())).collect::<Vec<_>>(),
    );
    let realigned_rows: Vec<(String, String, String)> = rows
        .iter()
        .map(|(a, b, _)| (a.clone(), b.clone(), "realigned response".to_string()))
        .collect();
    write_dataset(
        &realigned,
        &realigned_rows
            .iter()
            .map(|(a, b, c)| (a.as_str(), b.as_str(), c.as_str()))
            .collect::<Vec<_>>(),
    );

    let run = |out: &Path| {
        let status = bin()
            .args([
                "sample-mix",
                "--original",
                original.to_str().unwrap(),
                "--realigned",
                realigned.to_str().unwrap(),
                "--k",
                "5",
                "--seed",
                "7",
                "--out",
                out.to_str().unwrap(),
            ])
            .status()
            .unwrap();
        assert!(status.success());
    };
    let out_a = tmp.path().join("a.jsonl");
    let out_b = tmp.path().join("b.jsonl");
    run(&out_a);
    run(&out_b);
    assert_eq!(std::fs::read(&out_a).unwrap(), std::fs::read(&out_b).unwrap());
    let mixed = load_dataset(&out_a).unwrap();
    let realigned_count = mixed
        .records
        .iter()
        .filter(|r| r.response == "realigned response")
        .count();
    assert_eq!(realigned_count, 2); // round(5% of 40)
}

#[test]
fn stats_reports_realign_percentage() {
    let tmp = tempfile::tempdir().unwrap();
    let original = tmp.path().join("orig.jsonl");
    let realigned = tmp.path().join("real.jsonl");
    write_dataset(
        &original,
        &[
            ("a", "q", "one two three four five"),
            ("b", "q", "one two three four five"),
        ],
    );
    write_dataset(
        &realigned,
        &[
            ("a", "q", "one two three four five"),
            ("b", "q", "six seven eight nine ten"),
        ],
    );
    let report = tmp.path().join("report.json");
    let status = bin()
        .args([
            "stats",
            "--original",
            original.to_str().unwrap(),
            "--realigned",
            realigned.to_str().unwrap(),
            "--out",
            report.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(parsed["n_records"], 2);
    assert_eq!(parsed["realign_pct"], 50.0);
    assert_eq!(parsed["avg_response_words"], 5.0);
}

#[test]
fn eval_math_reports_accuracy() {
    let tmp = tempfile::tempdir().unwrap();
    let pred = tmp.path().join("pred.jsonl");
    let gold = tmp.path().join("gold.jsonl");
    write_dataset(
        &pred,
        &[("a", "q", "the answer is 72"), ("b", "q", "I say 5")],
    );
    write_dataset(&gold, &[("a", "q", "#### 72"), ("b", "q", "#### 6")]);
    let report = tmp.path().join("score.json");
    let status = bin()
        .args([
            "eval-math",
            "--pred",
            pred.to_str().unwrap(),
            "--gold",
            gold.to_str().unwrap(),
            "--out",
            report.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(parsed["n_total"], 2);
    assert_eq!(parsed["n_correct"], 1);
    assert_eq!(parsed["accuracy"], 0.5);
}

#[test]
fn filter_subcommand_restores_original_on_code_loss() {
    let tmp = tempfile::tempdir().unwrap();
    let original = tmp.path().join("orig.jsonl");
    let candidates = tmp.path().join("cand.jsonl");
    let code_response = "fix it like this:\n```c\nint x = 1;\n```\ndone";
    let dataset = Dataset::new(
        "t",
        vec![{
            let mut r = InstructionRecord::new("a", "fix my code", code_response);
            r.task = Some("code correction".to_string());
            r
        }],
    );
    save_dataset(&dataset, &original).unwrap();
    let mut cand = dataset.clone();
    cand.records[0].response = "I rewrote it as prose without any code at all".to_string();
    save_dataset(&cand, &candidates).unwrap();

    let out = tmp.path().join("out.jsonl");
    let status = bin()
        .args([
            "filter",
            "--in",
            original.to_str().unwrap(),
            "--candidates",
            candidates.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--criteria",
            criteria_dir().to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let filtered = load_dataset(&out).unwrap();
    assert_eq!(filtered.records[0].response, code_response);
}

fn completion_request(system: &str, user: &str, params: &DecodingParams) -> GatewayRequest {
    GatewayRequest::Completion {
        model: GatewayConfig::default().model,
        system: system.to_string(),
        user: user.to_string(),
        temperature: params.temperature,
        top_p: params.top_p,
        max_length: params.max_length,
        n_candidates: params.n_candidates,
    }
}

#[test]
fn classify_runs_from_a_sealed_cache() {
    let tmp = tempfile::tempdir().unwrap();
    let cache_dir = tmp.path().join("cache");
    let cache = ReplayCache::open(&cache_dir).unwrap();
    let registry = realign_core::CriteriaRegistry::load(&criteria_dir()).unwrap();

    let input = tmp.path().join("in.jsonl");
    write_dataset(&input, &[("a", "Write me a poem about rust", "r")]);
    let prompt = registry.classification_prompt("Write me a poem about rust");
    cache
        .put(
            &completion_request("", &prompt, &DecodingParams::default().single()),
            serde_json::json!(["poem_generation"]),
        )
        .unwrap();

    let out = tmp.path().join("out.jsonl");
    let status = bin()
        .args([
            "classify",
            "--in",
            input.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--criteria",
            criteria_dir().to_str().unwrap(),
            "--cache-dir",
            cache_dir.to_str().unwrap(),
            "--sealed",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let classified = load_dataset(&out).unwrap();
    assert_eq!(classified.records[0].task.as_deref(), Some("poem generation"));
}

#[test]
fn judge_factuality_from_sealed_cache() {
    let tmp = tempfile::tempdir().unwrap();
    let cache_dir = tmp.path().join("cache");
    let cache = ReplayCache::open(&cache_dir).unwrap();

    let (system, user) = realign_core::evalsuite::factuality_prompt("q1", "ref1", "ans1");
    cache
        .put(
            &completion_request(&system, &user, &DecodingParams::default().single()),
            serde_json::json!(["looks right. Rating: [[8]]"]),
        )
        .unwrap();

    let input = tmp.path().join("in.jsonl");
    std::fs::write(
        &input,
        "{\"id\":\"j1\",\"question\":\"q1\",\"reference\":\"ref1\",\"answer\":\"ans1\"}\n",
    )
    .unwrap();
    let out = tmp.path().join("verdicts.jsonl");
    let status = bin()
        .args([
            "judge",
            "--mode",
            "factuality",
            "--in",
            input.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--cache-dir",
            cache_dir.to_str().unwrap(),
            "--sealed",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let row: serde_json::Value =
        serde_json::from_str(std::fs::read_to_string(&out).unwrap().lines().next().unwrap())
            .unwrap();
    assert_eq!(row["verdict"]["rating"], 8);
}

#[test]
fn partial_failure_exits_with_distinct_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cache_dir = tmp.path().join("cache");
    ReplayCache::open(&cache_dir).unwrap();
    let input = tmp.path().join("in.jsonl");
    // No cache entries: the sealed classification misses, the record
    // degrades to passthrough, and the run reports partial failure.
    write_dataset(&input, &[("a", "some unclassifiable query", "resp")]);
    let out = tmp.path().join("out.jsonl");
    let status = bin()
        .args([
            "realign",
            "--in",
            input.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--criteria",
            criteria_dir().to_str().unwrap(),
            "--cache-dir",
            cache_dir.to_str().unwrap(),
            "--sealed",
        ])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));
    // The output file still exists with the record passed through.
    let dataset = load_dataset(&out).unwrap();
    assert_eq!(dataset.records.len(), 1);
    assert_eq!(dataset.records[0].response, "resp");
}

#[test]
fn usage_errors_exit_nonzero() {
    let status = bin().args(["no-such-subcommand"]).status().unwrap();
    assert!(!status.success());
    let status = bin()
        .args(["realign", "--in", "x.jsonl"]) // missing required flags
        .status()
        .unwrap();
    assert!(!status.success());
}
