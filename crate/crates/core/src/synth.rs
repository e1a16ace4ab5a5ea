//! Synthetic vocabulary-mismatch collections.
//!
//! Queries come in groups of three that share two group words `u`, `v`.
//! A synonym query is `[u, v, s]`. Its one relevant document holds the
//! canonical partner `c` of `s`; a hard negative holds a distractor `d`
//! that is as close to `s` in embedding space as `c` is. All group documents
//! tie under BM25 for the raw query and the hard negatives carry lower ids,
//! so raw retrieval ranks the relevant document behind them. The knowledge
//! graph links `entity(s)` to `entity(c)` (`same`) and to two noise entities
//! (`related`). Entity-name words share one embedding direction; the
//! distractors share another.
//!
//! Queries past `synonym_pairs` are controls `[u, v, k]` whose key `k`
//! occurs in the relevant document, so BM25 is already optimal for them.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::corpus::{write_qrels, write_queries, Document, JudgmentSet, Query};
use crate::error::{Error, Result};
use crate::knowledge::Relation;
use crate::metrics::average_precision;
use crate::retrieval::{Bm25Params, InvertedIndex};
use crate::rng::{stream, Rng};

const GROUP: usize = 3;
const DOC_LEN: usize = 8;
const MIN_FILLERS: usize = 20;
/// Weight of the shared base direction in `c` and `d`.
const RHO: f64 = 0.6;
/// Weight of the entity-name / distractor marker directions.
const GAMMA: f64 = 0.5;
const NOISE: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthParams {
    pub seed: u64,
    pub n_queries: usize,
    pub n_train: usize,
    pub n_valid: usize,
    pub n_docs: usize,
    pub vocab_size: usize,
    pub synonym_pairs: usize,
    pub dim: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            seed: 1,
            n_queries: 160,
            n_train: 100,
            n_valid: 30,
            n_docs: 500,
            vocab_size: 2000,
            synonym_pairs: 160,
            dim: 50,
        }
    }
}

impl SynthParams {
    pub fn from_config(cfg: &crate::config::TrainingConfig) -> Self {
        SynthParams {
            seed: cfg.seed,
            n_queries: cfg.synth_queries,
            n_train: cfg.synth_train,
            n_valid: cfg.synth_valid,
            n_docs: cfg.synth_docs,
            vocab_size: cfg.synth_vocab,
            synonym_pairs: cfg.synth_pairs,
            dim: cfg.synth_dim,
        }
    }

    fn n_groups(&self) -> usize {
        [self.n_train, self.n_valid, self.n_queries - self.n_train - self.n_valid]
            .iter()
            .map(|n| n.div_ceil(GROUP))
            .sum()
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if self.n_queries == 0 || self.dim == 0 {
            return bad("need at least one query and a positive dimension".into());
        }
        if self.n_train + self.n_valid > self.n_queries {
            return bad("train + valid queries exceed the query count".into());
        }
        if self.synonym_pairs > self.n_queries {
            return bad(format!(
                "{} synonym pairs but only {} queries",
                self.synonym_pairs, self.n_queries
            ));
        }
        if self.vocab_size < 4 * self.synonym_pairs {
            return bad(format!(
                "vocab_size {} is below 4 x synonym_pairs ({})",
                self.vocab_size,
                4 * self.synonym_pairs
            ));
        }
        if self.n_docs < 2 * self.n_queries {
            return bad(format!(
                "{} documents cannot hold a relevant and a hard document for {} queries",
                self.n_docs, self.n_queries
            ));
        }
        let reserved = 4 * self.synonym_pairs + 2 * self.n_groups() + (self.n_queries - self.synonym_pairs);
        if self.vocab_size < reserved + MIN_FILLERS {
            return bad(format!(
                "vocab_size {} leaves fewer than {MIN_FILLERS} filler words",
                self.vocab_size
            ));
        }
        Ok(())
    }
}

/// Everything the generator plants, in memory.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub docs: Vec<Document>,
    pub train: Vec<Query>,
    pub valid: Vec<Query>,
    pub test: Vec<Query>,
    pub qrels: JudgmentSet,
    /// `(entity_id, surface)`.
    pub entities: Vec<(String, String)>,
    pub edges: Vec<(String, Relation, String)>,
    /// `(surface, entity_id, commonness)`.
    pub dictionary: Vec<(String, String, f64)>,
    pub word_vectors: Vec<(String, Vec<f64>)>,
    pub entity_vectors: Vec<(String, Vec<f64>)>,
    /// Canonical partner of each synonym query, by query id.
    pub canonical: Vec<(String, String)>,
}

/// Outcome of the generator's own checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelfCheck {
    pub raw_map: f64,
    pub oracle_map: f64,
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn gaussian(rng: &mut Rng, dim: usize) -> Vec<f64> {
    unit((0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
}

fn mix(parts: &[(f64, &[f64])]) -> Vec<f64> {
    let dim = parts[0].1.len();
    unit(
        (0..dim)
            .map(|i| parts.iter().map(|(w, v)| w * v[i]).sum())
            .collect(),
    )
}

fn vector_lines(rows: &[(String, Vec<f64>)]) -> Vec<String> {
    let dim = rows.first().map_or(0, |r| r.1.len());
    let mut out = vec![format!("{} {dim}", rows.len())];
    for (t, v) in rows {
        let mut line = t.clone();
        for x in v {
            line.push(' ');
            line.push_str(&x.to_string());
        }
        out.push(line);
    }
    out
}

fn id(prefix: &str, i: usize, width: usize) -> String {
    format!("{prefix}{i:0width$}")
}

impl SynthData {
    pub fn all_queries(&self) -> impl Iterator<Item = &Query> {
        self.train.iter().chain(&self.valid).chain(&self.test)
    }

    pub fn canonical_of(&self, query_id: &str) -> Option<&str> {
        self.canonical
            .iter()
            .find(|(q, _)| q == query_id)
            .map(|(_, c)| c.as_str())
    }

    /// Raw and oracle-expanded BM25 MAP over every query.
    pub fn self_check(&self) -> Result<SelfCheck> {
        let index = InvertedIndex::build(&self.docs);
        let p = Bm25Params::default();
        let (mut raw, mut oracle, mut n) = (0.0, 0.0, 0usize);
        for q in self.all_queries() {
            let list = index.retrieve_topk(&q.query_id, &q.tokens, self.docs.len(), p);
            raw += average_precision(&list, &self.qrels, 1);
            let mut expanded = q.tokens.clone();
            if let Some(c) = self.canonical_of(&q.query_id) {
                expanded.push(c.to_string());
                for d in self.qrels.for_query(&q.query_id).into_iter().flatten() {
                    if *d.1 == 0 {
                        continue;
                    }
                    let before = index.bm25_score(&q.tokens, d.0, p)?;
                    let after = index.bm25_score(&expanded, d.0, p)?;
                    if after <= before {
                        return Err(Error::Invalid(format!(
                            "appending `{c}` does not raise the score of {} for {}",
                            d.0, q.query_id
                        )));
                    }
                }
            }
            let list = index.retrieve_topk(&q.query_id, &expanded, self.docs.len(), p);
            oracle += average_precision(&list, &self.qrels, 1);
            n += 1;
        }
        Ok(SelfCheck {
            raw_map: raw / n as f64,
            oracle_map: oracle / n as f64,
        })
    }

    /// Writes the data-directory layout read by the trainer.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let create = |name: &str| -> Result<(BufWriter<File>, std::path::PathBuf)> {
            let path = dir.join(name);
            let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
            Ok((BufWriter::new(f), path))
        };
        let write_lines = |name: &str, lines: &mut dyn Iterator<Item = String>| -> Result<()> {
            let (mut w, path) = create(name)?;
            for l in lines {
                writeln!(w, "{l}").map_err(|e| Error::io(&path, e))?;
            }
            w.flush().map_err(|e| Error::io(&path, e))
        };

        write_lines(
            "corpus.jsonl",
            &mut self.docs.iter().map(|d| {
                serde_json::json!({ "id": d.doc_id, "title": d.tokens.join(" ") }).to_string()
            }),
        )?;
        write_queries(&self.train, &dir.join("train.tsv"))?;
        write_queries(&self.valid, &dir.join("valid.tsv"))?;
        write_queries(&self.test, &dir.join("test.tsv"))?;
        write_qrels(&self.qrels, &dir.join("qrels.txt"))?;
        write_lines(
            "entity_names.tsv",
            &mut self.entities.iter().map(|(e, s)| format!("{e}\t{s}")),
        )?;
        write_lines(
            "kg_edges.tsv",
            &mut self.edges.iter().map(|(h, r, t)| format!("{h}\t{}\t{t}", r.as_str())),
        )?;
        write_lines(
            "entity_dict.tsv",
            &mut self.dictionary.iter().map(|(s, e, c)| format!("{s}\t{e}\t{c}")),
        )?;
        write_lines("word_emb.txt", &mut vector_lines(&self.word_vectors).into_iter())?;
        write_lines("entity_emb.txt", &mut vector_lines(&self.entity_vectors).into_iter())?;
        Ok(())
    }
}

/// Generates a collection and verifies its planted structure.
pub fn generate(params: &SynthParams) -> Result<(SynthData, SelfCheck)> {
    params.validate()?;
    let mut rng = stream(params.seed, "synth", 0, "");
    let dim = params.dim;
    let q_width = params.n_queries.to_string().len().max(3);
    let d_width = params.n_docs.to_string().len().max(4);
    let p_width = params.n_queries.max(params.vocab_size).to_string().len();

    let g_marker = gaussian(&mut rng, dim);
    let h_marker = gaussian(&mut rng, dim);
    let mut words: Vec<(String, Vec<f64>)> = Vec::new();
    let mut entity_vectors: Vec<(String, Vec<f64>)> = Vec::new();

    // Noise entities, one per synonym pair.
    let noise: Vec<String> = (0..params.synonym_pairs).map(|i| id("n", i, p_width)).collect();
    for n in &noise {
        let base = gaussian(&mut rng, dim);
        let z = gaussian(&mut rng, dim);
        words.push((n.clone(), mix(&[(RHO, &base), (GAMMA, &g_marker), (NOISE, &z)])));
    }

    // Splits are grouped independently so no group straddles two splits.
    let n_test = params.n_queries - params.n_train - params.n_valid;
    let mut group_of = Vec::with_capacity(params.n_queries);
    let mut next_group = 0;
    for size in [params.n_train, params.n_valid, n_test] {
        for i in 0..size {
            group_of.push(next_group + i / GROUP);
        }
        next_group += size.div_ceil(GROUP);
    }
    let n_groups = next_group;
    let group_words: Vec<(String, String)> = (0..n_groups)
        .map(|g| (id("u", g, p_width), id("v", g, p_width)))
        .collect();
    for (u, v) in &group_words {
        words.push((u.clone(), gaussian(&mut rng, dim)));
        words.push((v.clone(), gaussian(&mut rng, dim)));
    }

    let reserved = words.len() + 3 * params.synonym_pairs + (params.n_queries - params.synonym_pairs);
    let fillers: Vec<String> = (0..params.vocab_size - reserved).map(|i| id("f", i, p_width)).collect();
    for f in &fillers {
        words.push((f.clone(), gaussian(&mut rng, dim)));
    }

    let fill = |rng: &mut Rng, head: Vec<String>| -> Vec<String> {
        let used: BTreeSet<&String> = head.iter().collect();
        let mut pool: Vec<&String> = fillers.iter().filter(|f| !used.contains(f)).collect();
        let (picked, _) = pool.partial_shuffle(rng, DOC_LEN - head.len());
        let tail: Vec<String> = picked.iter().map(|s| (*s).clone()).collect();
        head.into_iter().chain(tail).collect()
    };

    let mut queries = Vec::with_capacity(params.n_queries);
    let mut hard_docs: Vec<Vec<String>> = Vec::new();
    let mut rel_docs: Vec<Vec<String>> = Vec::new();
    let mut canonical = Vec::new();
    let mut entities = Vec::new();
    let mut edges = Vec::new();
    let mut dictionary = Vec::new();
    for qi in 0..params.n_queries {
        let qid = id("q", qi, q_width);
        let (u, v) = group_words[group_of[qi]].clone();
        if qi < params.synonym_pairs {
            let (s, c, d) = (id("s", qi, p_width), id("c", qi, p_width), id("d", qi, p_width));
            let base = gaussian(&mut rng, dim);
            let zc = gaussian(&mut rng, dim);
            let zd = gaussian(&mut rng, dim);
            let c_vec = mix(&[(RHO, &base), (GAMMA, &g_marker), (NOISE, &zc)]);
            let d_vec = mix(&[(RHO, &base), (GAMMA, &h_marker), (NOISE, &zd)]);
            words.push((s.clone(), base.clone()));
            words.push((c.clone(), c_vec));
            words.push((d.clone(), d_vec));

            let (es, ec) = (format!("ent_{s}"), format!("ent_{c}"));
            entities.push((es.clone(), s.clone()));
            entities.push((ec.clone(), c.clone()));
            edges.push((es.clone(), Relation::Same, ec.clone()));
            let mut picks: Vec<usize> = (0..noise.len()).filter(|&j| j != qi).collect();
            let mut picks = picks.partial_shuffle(&mut rng, 2).0.to_vec();
            picks.sort_unstable();
            for &j in &picks {
                edges.push((es.clone(), Relation::Related, format!("ent_{}", noise[j])));
            }
            dictionary.push((s.clone(), es.clone(), 0.8));
            if let Some(&j) = picks.first() {
                dictionary.push((s.clone(), format!("ent_{}", noise[j]), 0.2));
            }
            dictionary.push((c.clone(), ec, 1.0));

            hard_docs.push(fill(&mut rng, vec![u.clone(), v.clone(), d]));
            rel_docs.push(fill(&mut rng, vec![u.clone(), v.clone(), c.clone()]));
            canonical.push((qid.clone(), c));
            queries.push(Query::new(qid, vec![u, v, s]));
        } else {
            let k = id("k", qi, p_width);
            words.push((k.clone(), gaussian(&mut rng, dim)));
            hard_docs.push(fill(&mut rng, vec![u.clone(), v.clone()]));
            rel_docs.push(fill(&mut rng, vec![u.clone(), v.clone(), k.clone()]));
            queries.push(Query::new(qid, vec![u, v, k]));
        }
    }
    for n in &noise {
        entities.push((format!("ent_{n}"), n.clone()));
    }
    entities.sort();

    // Document ids: per group the hard negatives come before the relevant
    // documents, then background documents matching one group word.
    let mut docs = Vec::with_capacity(params.n_docs);
    let mut qrels = JudgmentSet::new();
    let mut next_doc = 0usize;
    let mut start = 0;
    while start < params.n_queries {
        let g = group_of[start];
        let end = (start..params.n_queries).find(|&i| group_of[i] != g).unwrap_or(params.n_queries);
        for (qi, toks) in (start..end).map(|i| (i, &hard_docs[i])) {
            let did = id("doc", next_doc, d_width);
            qrels.insert(&queries[qi].query_id, &did, 0);
            docs.push(Document::new(did, toks.clone()));
            next_doc += 1;
        }
        for (qi, toks) in (start..end).map(|i| (i, &rel_docs[i])) {
            let did = id("doc", next_doc, d_width);
            qrels.insert(&queries[qi].query_id, &did, 1);
            docs.push(Document::new(did, toks.clone()));
            next_doc += 1;
        }
        start = end;
    }
    for b in 0..params.n_docs - docs.len() {
        let (u, v) = &group_words[b % n_groups];
        let head = if (b / n_groups) % 2 == 0 { u.clone() } else { v.clone() };
        let did = id("doc", next_doc, d_width);
        docs.push(Document::new(did, fill(&mut rng, vec![head])));
        next_doc += 1;
    }

    for (e, surface) in &entities {
        let base = &words.iter().find(|(w, _)| w == surface).expect("entity surface is a word").1;
        let z = gaussian(&mut rng, dim);
        entity_vectors.push((e.clone(), mix(&[(1.0, base), (NOISE, &z)])));
    }

    let test = queries.split_off(params.n_train + params.n_valid);
    let valid = queries.split_off(params.n_train);
    let data = SynthData {
        docs,
        train: queries,
        valid,
        test,
        qrels,
        entities,
        edges,
        dictionary,
        word_vectors: words,
        entity_vectors,
        canonical,
    };

    let check = data.self_check()?;
    if check.oracle_map != 1.0 {
        return Err(Error::Invalid(format!(
            "oracle expansion reaches MAP {} instead of 1",
            check.oracle_map
        )));
    }
    if params.synonym_pairs == params.n_queries && check.raw_map >= 0.6 {
        return Err(Error::Invalid(format!("raw BM25 MAP {} is not below 0.6", check.raw_map)));
    }
    if params.synonym_pairs == 0 && check.raw_map != 1.0 {
        return Err(Error::Invalid(format!(
            "control collection has raw BM25 MAP {} instead of 1",
            check.raw_map
        )));
    }
    Ok((data, check))
}
