use std::path::Path;
use std::process::Command;

fn dialrec(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_dialrec")).current_dir(dir).args(args).output().unwrap()
}

#[test]
fn missing_config_is_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dialrec(dir.path(), &["train", "--config", "absent.conf"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_key_is_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dialrec(dir.path(), &["synth", "--set", "no_such_key=1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_corpus_is_exit_3_with_marker() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("corpus.jsonl"), "{not json}\n").unwrap();
    std::fs::write(dir.path().join("run.conf"), "corpus = corpus.jsonl\nout = out\n").unwrap();
    let out = dialrec(dir.path(), &["stats", "--config", "run.conf"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("corpus.jsonl:1"));
    assert!(dir.path().join("out").join("FAILED").is_file());
}

#[test]
fn synth_then_train_eval_and_predict() {
    let dir = tempfile::tempdir().unwrap();
    let out = dialrec(dir.path(), &["synth", "--seed", "2", "--set", "synth_dialogues=80", "--out", "syn"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let small = ["--set", "dim=8", "--set", "kg_att_dim=8", "--set", "transr_dim=8", "--set", "transr_epochs=5", "--set", "epochs=2"];

    let mut args = vec!["train", "--config", "syn/experiment.conf", "--out", "run"];
    args.extend(small);
    let out = dialrec(dir.path(), &args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["report.json", "predictions.jsonl", "train_log.json", "checkpoint/manifest.json", "checkpoint/params.bin"] {
        assert!(dir.path().join("run").join(f).is_file(), "missing {f}");
    }

    let out = dialrec(dir.path(), &["eval", "--config", "syn/experiment.conf", "--out", "run"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run/eval_report.json")).unwrap()).unwrap();
    let trained: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run/report.json")).unwrap()).unwrap();
    assert_eq!(report["jaccard"], trained["jaccard"]);

    let before = std::fs::read(dir.path().join("run/predictions.jsonl")).unwrap();
    let out = dialrec(dir.path(), &["predict", "--config", "syn/experiment.conf", "--out", "run"]);
    assert!(out.status.success());
    assert_eq!(std::fs::read(dir.path().join("run/predictions.jsonl")).unwrap(), before);
}

#[test]
fn no_kg_needs_no_graph_file() {
    let dir = tempfile::tempdir().unwrap();
    assert!(dialrec(dir.path(), &["synth", "--set", "synth_dialogues=60", "--out", "syn"]).status.success());
    std::fs::write(dir.path().join("nokg.conf"), "corpus = syn/corpus.jsonl\nepochs = 1\ndim = 8\n").unwrap();
    let out = dialrec(dir.path(), &["train", "--config", "nokg.conf", "--no-kg", "--out", "run"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = dialrec(dir.path(), &["train", "--config", "nokg.conf", "--out", "run2"]);
    assert_eq!(out.status.code(), Some(2));
}
