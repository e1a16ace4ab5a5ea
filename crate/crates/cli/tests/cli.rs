use std::path::Path;
use std::process::{Command, Output};

use cnir_core::corpus::{write_run, DEFAULT_RUN_TAG};
use cnir_core::trainer::{load_policy, load_ranker, rank_pipeline, Dataset};
use cnir_core::TrainingConfig;

const SMALL: &str = "\
synth_queries = 40
synth_train = 20
synth_valid = 10
synth_docs = 200
synth_vocab = 400
synth_pairs = 40
synth_dim = 16
pretrain_epochs = 3
max_epochs = 3
lr_reformulator = 0.01
";

fn cnir(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cnir"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = cnir(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("small.cfg"), SMALL).unwrap();
    ok(&["gen-synth", "--config", "small.cfg", "--out", "data"], dir.path());
    dir
}

fn only_run_dir(root: &Path) -> std::path::PathBuf {
    let mut dirs: Vec<_> = std::fs::read_dir(root).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(dirs.len(), 1);
    dirs.pop().unwrap()
}

#[test]
fn version_lists_formats() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["--version"], dir.path());
    assert!(out.contains("index format 1"));
    assert!(out.contains("checkpoint format 1"));
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    assert!(ok(&["--help"], dir.path()).contains("reformulate"));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = cnir(&["eval", "--bogus"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));

    assert_eq!(cnir(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(cnir(&[], dir.path()).status.code(), Some(1));

    let out = cnir(&["index", "--corpus", "c", "--out", "i", "--set", "nope=1"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = cnir(&["index", "--corpus", "missing.jsonl", "--out", "idx"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(dir.path().join("bad.jsonl"), "{not json}\n").unwrap();
    let out = cnir(&["index", "--corpus", "bad.jsonl", "--out", "idx"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_prints_table() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("run.txt"), "q1 Q0 d1 1 2.0 x\nq1 Q0 d2 2 1.0 x\n").unwrap();
    std::fs::write(p.join("qrels.txt"), "q1 0 d1 0\nq1 0 d2 1\n").unwrap();
    let out = ok(&["eval", "--run", "run.txt", "--qrels", "qrels.txt", "--per-query", "pq.tsv"], p);
    assert!(out.contains("MAP"));
    assert!(out.contains("0.5000"));
    let tsv = std::fs::read_to_string(p.join("pq.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 2);
}

#[test]
fn index_and_baselines() {
    let dir = setup();
    let p = dir.path();
    assert!(ok(&["index", "--corpus", "data/corpus.jsonl", "--out", "idx.txt"], p).contains("200"));
    for method in ["tfidf", "rm"] {
        let out = format!("{method}.tsv");
        ok(&["reformulate", "--config", "small.cfg", "--data", "data", "--method", method, "--out", &out], p);
        assert_eq!(std::fs::read_to_string(p.join(&out)).unwrap().lines().count(), 10);
    }
    let out = cnir(&["reformulate", "--config", "small.cfg", "--data", "data", "--method", "rl", "--out", "x"], p);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_is_deterministic() {
    let dir = setup();
    let p = dir.path();
    for root in ["a", "b"] {
        ok(&["train", "--config", "small.cfg", "--set", "seed=7", "--data", "data", "--runs", root], p);
    }
    let (a, b) = (only_run_dir(&p.join("a")), only_run_dir(&p.join("b")));
    assert_eq!(a.file_name(), b.file_name());
    for f in ["history.tsv", "policy.ckpt", "ranker.ckpt", "config.txt"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn rank_after_reformulate_matches_pipeline() {
    let dir = setup();
    let p = dir.path();
    ok(&["pretrain", "--config", "small.cfg", "--data", "data", "--out", "pre.ckpt"], p);
    ok(&["train", "--config", "small.cfg", "--data", "data", "--runs", "runs", "--pretrained", "pre.ckpt"], p);
    let run = only_run_dir(&p.join("runs"));
    let policy = run.join("policy.ckpt");
    let ranker = run.join("ranker.ckpt");
    let (policy_s, ranker_s) = (policy.to_str().unwrap(), ranker.to_str().unwrap());
    ok(&["reformulate", "--config", "small.cfg", "--data", "data", "--method", "rl", "--policy", policy_s, "--out", "rl.tsv"], p);
    ok(&["rank", "--config", "small.cfg", "--data", "data", "--ranker", ranker_s, "--queries", "rl.tsv", "--out", "cli.run"], p);

    let cfg = TrainingConfig::parse(SMALL).unwrap();
    let ds = Dataset::load(&p.join("data"), &cfg).unwrap();
    let lists = rank_pipeline(
        &load_policy(&ds, &cfg, &policy).unwrap(),
        &load_ranker(&ds, &cfg, &ranker).unwrap(),
        &ds,
        &ds.test,
        cfg.K,
    )
    .unwrap();
    write_run(&lists, &p.join("lib.run"), DEFAULT_RUN_TAG).unwrap();
    assert_eq!(
        std::fs::read(p.join("cli.run")).unwrap(),
        std::fs::read(p.join("lib.run")).unwrap()
    );
}
