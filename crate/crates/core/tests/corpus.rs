use cnir_core::corpus::{load_corpus, load_qrels, load_queries, write_qrels, JudgmentSet};
use cnir_core::Error;
use proptest::prelude::*;

fn write(dir: &tempfile::TempDir, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn corpus_preserves_file_order_and_tokenizes() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        &dir,
        "c.jsonl",
        "{\"id\":\"z\",\"title\":\"Hello World\"}\n\n{\"id\":\"a\",\"title\":\"x , y\"}\n{\"id\":\"m\",\"title\":\"\"}\n",
    );
    let docs = load_corpus(&p).unwrap();
    let ids: Vec<&str> = docs.iter().map(|d| d.doc_id.as_str()).collect();
    assert_eq!(ids, ["z", "a", "m"]);
    assert_eq!(docs[0].tokens, ["hello", "world"]);
    assert_eq!(docs[1].tokens, ["x", "y"]);
    assert!(docs[2].tokens.is_empty());
    assert_eq!(load_corpus(&p).unwrap(), docs);
}

#[test]
fn corpus_errors_carry_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(&dir, "c.jsonl", "{\"id\":\"a\",\"title\":\"x\"}\n{broken\n");
    match load_corpus(&p) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected parse error, got {other:?}"),
    }
    let p = write(&dir, "d.jsonl", "{\"id\":\"a\",\"title\":\"x\"}\n{\"id\":\"a\",\"title\":\"y\"}\n");
    assert!(matches!(load_corpus(&p), Err(Error::DuplicateId(id)) if id == "a"));
    assert!(matches!(load_corpus(&dir.path().join("missing")), Err(Error::Io { .. })));
}

#[test]
fn queries_skip_blank_lines_and_reject_duplicates() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(&dir, "q.tsv", "q1\tFoo bar\n\nq2\tbaz\n");
    let set = load_queries(&p).unwrap();
    assert_eq!(set.skipped_blank, 1);
    assert_eq!(set.queries[0].tokens, ["foo", "bar"]);
    let p = write(&dir, "dup.tsv", "q1\ta\nq1\tb\n");
    assert!(matches!(load_queries(&p), Err(Error::DuplicateId(_))));
    let p = write(&dir, "bad.tsv", "q1 no tab\n");
    assert!(matches!(load_queries(&p), Err(Error::Parse { line: 1, .. })));
}

#[test]
fn qrels_validation() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(&dir, "neg.txt", "q 0 d -1\n");
    assert!(matches!(load_qrels(&p), Err(Error::Parse { .. })));
    let p = write(&dir, "short.txt", "q 0 d\n");
    assert!(matches!(load_qrels(&p), Err(Error::Parse { .. })));
    let p = write(&dir, "ok.txt", "q 0 d 2\nq 0 e 0\n");
    let j = load_qrels(&p).unwrap();
    assert_eq!(j.grade("q", "d"), 2);
    assert_eq!(j.grade("q", "unjudged"), 0);
    assert_eq!(j.grade("other", "d"), 0);
    assert!(j.has_judgments("q"));
    assert!(!j.has_judgments("other"));
}

proptest! {
    #[test]
    fn qrels_round_trip(rows in prop::collection::vec((0u8..5, 0u8..20, 0u32..5), 0..40)) {
        let mut j = JudgmentSet::new();
        for (q, d, g) in &rows {
            j.insert(&format!("q{q}"), &format!("d{d}"), *g);
        }
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("qrels.txt");
        write_qrels(&j, &p).unwrap();
        prop_assert_eq!(load_qrels(&p).unwrap(), j);
    }
}
