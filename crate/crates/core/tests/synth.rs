mod common;

use cnir_core::retrieval::{Bm25Params, InvertedIndex};
use cnir_core::synth::{generate, SynthParams};
use cnir_core::TrainingConfig;

fn read_dir(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn same_seed_gives_byte_identical_directories() {
    let cfg = common::small_config(&[]);
    let params = SynthParams::from_config(&cfg);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate(&params).unwrap().0.write(a.path()).unwrap();
    generate(&params).unwrap().0.write(b.path()).unwrap();
    let (fa, fb) = (read_dir(a.path()), read_dir(b.path()));
    assert_eq!(fa.len(), 10);
    assert_eq!(fa, fb);

    let other = tempfile::tempdir().unwrap();
    let mut params2 = params.clone();
    params2.seed += 1;
    generate(&params2).unwrap().0.write(other.path()).unwrap();
    assert_ne!(read_dir(other.path()), fa);
}

#[test]
fn canonical_term_raises_every_relevant_score() {
    let (data, check) = generate(&SynthParams::default()).unwrap();
    assert!(check.raw_map < 0.6);
    assert_eq!(check.oracle_map, 1.0);
    let index = InvertedIndex::build(&data.docs);
    let p = Bm25Params::default();
    for q in data.all_queries() {
        let c = data.canonical_of(&q.query_id).expect("every default query is a synonym query");
        let mut expanded = q.tokens.clone();
        expanded.push(c.to_string());
        for (doc, &g) in data.qrels.for_query(&q.query_id).unwrap() {
            if g > 0 {
                assert!(index.bm25_score(&expanded, doc, p).unwrap() > index.bm25_score(&q.tokens, doc, p).unwrap());
            }
        }
    }
}

#[test]
fn zero_pairs_is_a_control_where_bm25_is_optimal() {
    let mut cfg = common::small_config(&[]);
    cfg.synth_pairs = 0;
    let (data, check) = generate(&SynthParams::from_config(&cfg)).unwrap();
    assert!(data.canonical.is_empty());
    assert_eq!(check.raw_map, 1.0);
    assert_eq!(check.oracle_map, 1.0);
}

#[test]
fn inconsistent_parameters_are_rejected() {
    let mut p = SynthParams::default();
    p.vocab_size = 4 * p.synonym_pairs - 1;
    assert!(generate(&p).is_err());
    let mut p = SynthParams::default();
    p.n_docs = 10;
    assert!(generate(&p).is_err());
}

#[test]
fn default_config_matches_default_params() {
    assert_eq!(SynthParams::from_config(&TrainingConfig::default()), SynthParams::default());
}
