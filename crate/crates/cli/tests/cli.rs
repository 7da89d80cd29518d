//! Drives the `asc2end` binary over the bundled toy data.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn toy() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/toy")
}

fn asc2end(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_asc2end"))
        .args(args)
        .env_remove("ASC2END_RUN_DIR")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn run_toy(dir: &Path, mode: &str) -> Output {
    let config = toy().join("asc2end.conf");
    asc2end(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--mode",
        mode,
        "--run-dir",
        dir.to_str().unwrap(),
    ])
}

#[test]
fn run_then_report_and_score() {
    let tmp = tempfile::tempdir().unwrap();
    let full = tmp.path().join("full");
    let baseline = tmp.path().join("baseline");

    let out = run_toy(&full, "full");
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("5 of 5 documents processed"));
    assert!(full.join("report.json").exists());
    assert_eq!(run_toy(&baseline, "baseline").status.code(), Some(0));

    let out = asc2end(&[
        "report",
        "--run",
        baseline.to_str().unwrap(),
        "--reference",
        full.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("% token diff") && text.contains("baseline"), "{text}");

    let corpus = toy().join("corpus.csv");
    let out = asc2end(&[
        "score-rouge",
        "--run",
        full.to_str().unwrap(),
        "--corpus",
        corpus.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("5 documents scored"));
    assert!(full.join("rouge_report.json").exists() && full.join("rouge_report.txt").exists());
}

#[test]
fn mode_and_set_overrides_apply() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("r");
    let config = toy().join("asc2end.conf");
    let out = asc2end(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--mode",
        "no-ds",
        "--sample",
        "2",
        "--set",
        "k=2",
        "--run-dir",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("mode no_ds: 2 of 2 documents processed"), "{text}");
    assert!(!dir.join("summaries.jsonl").exists());
}

#[test]
fn bad_config_exits_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("bad.conf");
    std::fs::write(&config, "company = Acme\nno_such_key = 1\n").unwrap();
    let out = asc2end(&["run", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));

    std::fs::write(&config, "company = Acme\n").unwrap();
    let out = asc2end(&["run", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let out = asc2end(&["run", "--config", tmp.path().join("missing.conf").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unreachable_backend_exits_with_4() {
    let tmp = tempfile::tempdir().unwrap();
    let config = toy().join("asc2end.conf");
    let out = asc2end(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--set",
        "embedding.backend=http",
        "--set",
        "embedding.endpoint=http://127.0.0.1:9/v1/embeddings",
        "--set",
        "embedding.timeout_secs=2",
        "--set",
        "retry.max_attempts=1",
        "--run-dir",
        tmp.path().join("r").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn survey_prints_overall_scores() {
    let tmp = tempfile::tempdir().unwrap();
    let cards = tmp.path().join("cards.csv");
    let unmask = tmp.path().join("unmask.csv");
    std::fs::write(
        &cards,
        "annotator_id,doc_id,model_label,q1,q2,q3,q4,q5\na1,d1,A,1,1,1,0,1\na2,d1,A,1,1,0,0,1\n",
    )
    .unwrap();
    std::fs::write(&unmask, "model_label,model_name\nA,Model One\n").unwrap();
    let out = asc2end(&[
        "survey",
        "--cards",
        cards.to_str().unwrap(),
        "--unmask",
        unmask.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("Model One") && text.contains("3.500"), "{text}");
}
