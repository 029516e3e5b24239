//! End-to-end tests of the `clinrag` binary: index → run → report against
//! the shipped fixtures, all with mock backends in temp directories.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

fn clinrag(config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clinrag"))
        .arg("--config")
        .arg(config)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).to_string()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).to_string()
}

/// Config file with fixture data paths and work paths inside `dir`.
fn write_config(dir: &Path) -> PathBuf {
    let models = [
        ("GPT-4o", "LLM"),
        ("Mixtral-8x7b-32768", "SLM"),
        ("Nemotron-70b-instruct", "SLM"),
        ("Qwen-Turbo", "SLM"),
        ("Claude-3.5-Sonnet", "LLM"),
    ];
    let model_objects: Vec<serde_json::Value> = models
        .iter()
        .map(|(name, class)| {
            serde_json::json!({
                "name": name,
                "endpoint": "http://localhost:9/unused",
                "model_id": name.to_lowercase(),
                "class_label": class,
            })
        })
        .collect();
    let config = serde_json::json!({
        "paths": {
            "corpus_dir": fixture("corpus"),
            "cases_file": fixture("cases.json"),
            "synonyms_file": fixture("synonyms.json"),
            "templates_file": fixture("templates.json"),
            "index_file": dir.join("guidelines.rgix"),
            "output_dir": dir.join("out"),
            "cache_dir": dir.join("cache"),
        },
        "models": model_objects,
        "embedding": { "kind": "deterministic_test" },
    });
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

fn count_lines(path: &Path) -> usize {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .count()
}

#[test]
fn index_run_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());

    // Index twice: same fingerprint, idempotent.
    let first = clinrag(&config, &["index", "--mock"]);
    assert!(first.status.success(), "{}", stderr(&first));
    let out1 = stdout(&first);
    assert!(out1.contains("indexed"), "{out1}");
    let fingerprint_line = out1
        .lines()
        .find(|l| l.starts_with("fingerprint"))
        .unwrap()
        .to_string();

    let second = clinrag(&config, &["index", "--mock"]);
    assert!(second.status.success());
    assert!(
        stdout(&second).contains(&fingerprint_line),
        "rerun must print the same fingerprint"
    );

    // Full mock run: 10 cases × 5 models × 4 conditions.
    let run = clinrag(&config, &["run", "--mock"]);
    assert!(run.status.success(), "{}", stderr(&run));
    let records = dir.path().join("out").join("records.ndjson");
    assert_eq!(count_lines(&records), 200);
    assert!(dir.path().join("out").join("manifest.json").exists());

    // Re-running an unchanged complete run is a no-op.
    let rerun = clinrag(&config, &["run", "--mock"]);
    assert!(rerun.status.success(), "{}", stderr(&rerun));
    assert!(
        stdout(&rerun).contains("already complete"),
        "{}",
        stdout(&rerun)
    );

    // Report twice: files exist and are byte-identical.
    let report = clinrag(&config, &["report"]);
    assert!(report.status.success(), "{}", stderr(&report));
    let out_dir = dir.path().join("out");
    for name in [
        "summary.md",
        "summary.csv",
        "summary.json",
        "ragas_by_condition.csv",
    ] {
        assert!(out_dir.join(name).exists(), "{name} missing");
    }
    let md = std::fs::read_to_string(out_dir.join("summary.md")).unwrap();
    assert!(md.contains(
        "| Model | Model Size | Configuration | Metric | Top Score (%) | Evaluation Assessment |"
    ));
    let first_bytes = std::fs::read(out_dir.join("summary.md")).unwrap();
    let report2 = clinrag(&config, &["report"]);
    assert!(report2.status.success());
    assert_eq!(
        std::fs::read(out_dir.join("summary.md")).unwrap(),
        first_bytes
    );
}

#[test]
fn conditions_flag_narrows_the_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    assert!(clinrag(&config, &["index", "--mock"]).status.success());

    let narrow_out = dir.path().join("narrow");
    let run = clinrag(
        &config,
        &[
            "run",
            "--mock",
            "--conditions",
            "rag+prediag",
            "--out",
            narrow_out.to_str().unwrap(),
        ],
    );
    assert!(run.status.success(), "{}", stderr(&run));
    assert_eq!(
        count_lines(&narrow_out.join("records.ndjson")),
        50,
        "10 cases × 5 models × 1 condition"
    );
}

#[test]
fn models_flag_selects_a_subset() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    assert!(clinrag(&config, &["index", "--mock"]).status.success());

    let subset_out = dir.path().join("subset");
    let run = clinrag(
        &config,
        &[
            "run",
            "--mock",
            "--models",
            "GPT-4o,Qwen-Turbo",
            "--out",
            subset_out.to_str().unwrap(),
        ],
    );
    assert!(run.status.success(), "{}", stderr(&run));
    assert_eq!(count_lines(&subset_out.join("records.ndjson")), 80);

    let unknown = clinrag(&config, &["run", "--mock", "--models", "NoSuchModel"]);
    assert!(!unknown.status.success());
    assert!(stderr(&unknown).contains("NoSuchModel"));
}

#[test]
fn rag_run_without_index_names_the_index_path() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let run = clinrag(&config, &["run", "--mock"]);
    assert!(!run.status.success());
    assert!(stderr(&run).contains("guidelines.rgix"), "{}", stderr(&run));
}

#[test]
fn norag_run_without_index_is_allowed() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let run = clinrag(
        &config,
        &[
            "run",
            "--mock",
            "--conditions",
            "norag+noprediag,norag+prediag",
        ],
    );
    assert!(run.status.success(), "{}", stderr(&run));
    assert_eq!(
        count_lines(&dir.path().join("out").join("records.ndjson")),
        100
    );
}

#[test]
fn two_short_docs_index_as_one_chunk_each() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    std::fs::create_dir_all(&corpus).unwrap();
    std::fs::write(corpus.join("a.md"), "x".repeat(1000)).unwrap();
    std::fs::write(corpus.join("b.md"), "y".repeat(1000)).unwrap();
    let config_path = dir.path().join("config.json");
    let config = serde_json::json!({
        "paths": {
            "corpus_dir": corpus,
            "cases_file": fixture("cases.json"),
            "templates_file": fixture("templates.json"),
            "index_file": dir.path().join("small.rgix"),
            "output_dir": dir.path().join("out"),
        },
    });
    std::fs::write(&config_path, serde_json::to_string(&config).unwrap()).unwrap();
    // Default chunk_size 1200 > 1000 chars: one chunk per document.
    let index = clinrag(&config_path, &["index", "--mock"]);
    assert!(index.status.success(), "{}", stderr(&index));
    assert!(
        stdout(&index).contains("indexed 2 chunks from 2 documents"),
        "{}",
        stdout(&index)
    );
}

#[test]
fn trials_flag_multiplies_records() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let run = clinrag(
        &config,
        &[
            "run",
            "--mock",
            "--conditions",
            "norag+noprediag",
            "--models",
            "GPT-4o",
            "--trials",
            "3",
        ],
    );
    assert!(run.status.success(), "{}", stderr(&run));
    assert_eq!(
        count_lines(&dir.path().join("out").join("records.ndjson")),
        30,
        "10 cases × 1 model × 1 condition × 3 trials"
    );
}

#[test]
fn empty_corpus_fails_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty-corpus");
    std::fs::create_dir_all(&empty).unwrap();
    let config_path = dir.path().join("config.json");
    let config = serde_json::json!({
        "paths": {
            "corpus_dir": empty,
            "cases_file": fixture("cases.json"),
            "templates_file": fixture("templates.json"),
            "index_file": dir.path().join("guidelines.rgix"),
            "output_dir": dir.path().join("out"),
        },
    });
    std::fs::write(&config_path, serde_json::to_string(&config).unwrap()).unwrap();
    let index = clinrag(&config_path, &["index", "--mock"]);
    assert!(!index.status.success());
    assert!(
        stderr(&index).contains("empty corpus"),
        "{}",
        stderr(&index)
    );
}

#[test]
fn validate_reports_each_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let validate = clinrag(&config, &["validate"]);
    assert!(validate.status.success(), "{}", stderr(&validate));
    let out = stdout(&validate);
    assert!(out.contains("ok — cases: 10"), "{out}");
    assert!(out.contains("ok — corpus: 7 documents"), "{out}");
    assert!(out.contains("ok — templates: version v1"), "{out}");
}

#[test]
fn report_rejects_empty_or_malformed_records() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());

    let empty = dir.path().join("empty.ndjson");
    std::fs::write(&empty, "").unwrap();
    let report = clinrag(&config, &["report", "--results", empty.to_str().unwrap()]);
    assert!(!report.status.success());
    assert!(
        stderr(&report).contains("no records"),
        "{}",
        stderr(&report)
    );

    let malformed = dir.path().join("bad.ndjson");
    std::fs::write(&malformed, "{\"case_id\": \"x\"\n").unwrap();
    let report = clinrag(
        &config,
        &["report", "--results", malformed.to_str().unwrap()],
    );
    assert!(!report.status.success());
    assert!(
        stderr(&report).contains(":1:"),
        "line number expected: {}",
        stderr(&report)
    );
}

#[test]
fn report_keeps_unknown_models_open_world() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    assert!(clinrag(&config, &["index", "--mock"]).status.success());
    let out = dir.path().join("openworld");
    assert!(clinrag(
        &config,
        &[
            "run",
            "--mock",
            "--conditions",
            "rag+noprediag",
            "--out",
            out.to_str().unwrap()
        ],
    )
    .status
    .success());

    // Append a record from a model this harness never configured.
    let records = out.join("records.ndjson");
    let mut text = std::fs::read_to_string(&records).unwrap();
    let foreign = serde_json::json!({
        "case_id": "case-01",
        "model": "Foreign-Model",
        "condition": {"rag_enabled": true, "prediagnosis_provided": false},
        "trial": 0,
        "status": "scored",
        "parse_status": "ok",
        "f1_dx": {"precision": 1.0, "recall": 1.0, "f1": 1.0},
        "f1_tx": {"precision": 1.0, "recall": 1.0, "f1": 1.0},
        "ragas": null,
        "prompt_hash": "h",
        "error": null
    });
    text.push_str(&foreign.to_string());
    text.push('\n');
    std::fs::write(&records, text).unwrap();

    let report = clinrag(&config, &["report", "--results", records.to_str().unwrap()]);
    assert!(report.status.success(), "{}", stderr(&report));
    let summary = std::fs::read_to_string(out.join("summary.md")).unwrap();
    assert!(
        summary.contains("Foreign-Model"),
        "unknown models are included as-is:\n{summary}"
    );
}
