use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/toy")
}

fn kbqa(args: &[&str], out: &Path) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_kbqa"));
    cmd.args(args)
        .arg("--config")
        .arg(fixtures().join("kbqa.conf"))
        .arg("--model")
        .arg(out.join("model.tsv"))
        .arg("--index")
        .arg(out.join("entities.idx"));
    cmd
}

fn run(args: &[&str], out: &Path) -> Output {
    kbqa(args, out).output().unwrap()
}

fn records(output: &Output) -> Vec<serde_json::Value> {
    String::from_utf8_lossy(&output.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn built() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["pipeline"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    dir
}

#[test]
fn pipeline_answers_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["pipeline", "When was Barack Obama born?"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let r = records(&o);
    assert_eq!(r.len(), 1);
    assert_eq!(r[0]["answer"], "1961");
    assert_eq!(r[0]["trace"]["predicate_path"], "dob");
}

#[test]
fn unanswered_question_exits_four() {
    let dir = built();
    let o = run(&["answer", "When was Barack Obama born?", "what is love"], dir.path());
    assert_eq!(o.status.code(), Some(4));
    let r = records(&o);
    assert_eq!(r[0]["answer"], "1961");
    assert_eq!(r[1]["answer"], serde_json::Value::Null);
    assert_eq!(r[1]["reason"], "no entity");
}

#[test]
fn batch_from_stdin() {
    let dir = built();
    let mut child = kbqa(&["answer", "--batch", "-"], dir.path())
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"When was Barack Obama born?\n\nWhen was Barack Obama's wife born?\n")
        .unwrap();
    let o = child.wait_with_output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    let r = records(&o);
    assert_eq!(r.len(), 2);
    assert_eq!(r[1]["answer"], "1964");
    assert_eq!(r[1]["sequence"].as_array().unwrap().len(), 2);
}

#[test]
fn repl_reads_until_end_of_input() {
    let dir = built();
    let mut child = kbqa(&["repl"], dir.path())
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"When was Barack Obama born?\nwhat is love\n").unwrap();
    let o = child.wait_with_output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(records(&o).len(), 2);
}

#[test]
fn decompose_prints_sequence_and_flags() {
    let dir = built();
    let o = run(&["decompose", "When was Barack Obama's wife born?"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let r = &records(&o)[0];
    assert_eq!(r["sequence"].as_array().unwrap().len(), 2);
    assert_eq!(r["primitive_flags"], serde_json::json!([true, false]));
    assert!(r["score"].as_f64().unwrap() > 0.0);
}

#[test]
fn missing_artifacts_exit_two_and_are_listed() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["answer", "When was Barack Obama born?"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("model.tsv") && err.contains("entities.idx"), "{err}");
}

#[test]
fn bad_config_value_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["pipeline", "--k", "many"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn stage_failure_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("empty.jsonl");
    std::fs::write(&corpus, "").unwrap();
    let o = run(&["pipeline", "--corpus", corpus.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(!dir.path().join("model.tsv").exists());
}

#[test]
fn reruns_are_byte_identical() {
    let a = built();
    let b = built();
    for name in ["model.tsv", "entities.idx"] {
        assert_eq!(
            std::fs::read(a.path().join(name)).unwrap(),
            std::fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
    let q = ["answer", "When was Barack Obama's wife born?"];
    assert_eq!(run(&q, a.path()).stdout, run(&q, b.path()).stdout);
}
