mod common;

use std::path::Path;

use common::fixtures;
use kbqa_core::pipeline::{self, OnlineSystem, PipelineConfig};
use kbqa_core::{Error, PredicateModel};

fn config(out: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::from_file(&fixtures().join("kbqa.conf")).unwrap();
    let pairs = vec![
        ("model".to_string(), out.join("model.tsv").display().to_string()),
        ("index".to_string(), out.join("entities.idx").display().to_string()),
    ];
    cfg.apply(&pairs, Path::new("")).unwrap();
    cfg
}

fn artifacts(out: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn offline_then_online_answers_toy_questions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let report = pipeline::run_offline(&cfg).unwrap();
    assert!(report.observations > 0);
    assert!(report.model_rows > 0);

    let system = OnlineSystem::load(&cfg).unwrap();
    let born = system.answer("When was Barack Obama born?");
    assert_eq!(born.answer.as_deref(), Some("1961"));
    assert_eq!(born.trace.as_ref().unwrap().predicate_path, "dob");

    let nested = system.answer("When was Barack Obama's wife born?");
    assert_eq!(nested.answer.as_deref(), Some("1964"));
    assert_eq!(nested.sequence.as_ref().map(Vec::len), Some(2));

    let none = system.answer("what is love");
    assert!(!none.is_answered());
    assert_eq!(none.reason.as_deref(), Some("no entity"));
}

#[test]
fn learned_model_prefers_birth_date() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    pipeline::run_offline(&cfg).unwrap();
    let kb = common::toy_kb();
    let model = PredicateModel::load_file(&dir.path().join("model.tsv"), &kb).unwrap();
    let t = kbqa_core::Template::parse("when was $person born").unwrap();
    let best = model.best(&t).unwrap();
    assert_eq!(kb.format_path(best), "dob");
    assert!(model.get(&t, best) > 0.5);
    for t in model.templates() {
        let sum: f64 = model.row(t).unwrap().iter().map(|(_, p)| p).sum();
        assert!((sum - 1.0).abs() < 1e-9, "{t}: {sum}");
    }
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline::run_offline(&config(a.path())).unwrap();
    pipeline::run_offline(&config(b.path())).unwrap();
    let (fa, fb) = (artifacts(a.path()), artifacts(b.path()));
    assert_eq!(fa.len(), 4);
    assert_eq!(fa, fb);
}

#[test]
fn separate_stages_match_the_full_run() {
    let full = tempfile::tempdir().unwrap();
    let staged = tempfile::tempdir().unwrap();
    pipeline::run_offline(&config(full.path())).unwrap();
    let cfg = config(staged.path());
    pipeline::run_build_index(&cfg).unwrap();
    pipeline::run_expand(&cfg).unwrap();
    pipeline::run_learn(&cfg).unwrap();
    for name in ["model.tsv", "entities.idx"] {
        assert_eq!(
            std::fs::read(full.path().join(name)).unwrap(),
            std::fs::read(staged.path().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn empty_corpus_fails_and_leaves_no_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("empty.jsonl");
    std::fs::write(&corpus, "").unwrap();
    let out = dir.path().join("out");
    let mut cfg = config(&out);
    cfg.corpus = Some(corpus);
    let err = pipeline::run_offline(&cfg).unwrap_err();
    assert!(matches!(err, Error::Stage { .. }), "{err}");
    assert!(err.to_string().contains("no observations extracted"), "{err}");
    assert!(!out.join("model.tsv").exists());
    assert!(!out.join("entities.idx").exists());
}

#[test]
fn missing_artifacts_are_all_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let Err(err) = OnlineSystem::load(&cfg) else {
        panic!("loaded without artifacts");
    };
    let msg = err.to_string();
    assert!(matches!(err, Error::Config(_)), "{msg}");
    assert!(msg.contains("model.tsv") && msg.contains("entities.idx"), "{msg}");
}
