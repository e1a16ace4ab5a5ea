//! Corpus, query, judgment and run-file formats.
//!
//! * corpus: JSON lines with `id` and `title`
//! * queries: `query_id \t text`
//! * qrels: TREC `query_id 0 doc_id grade`
//! * runs: TREC `query_id Q0 doc_id rank score tag`

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::lexical::tokenize;

pub const DEFAULT_RUN_TAG: &str = "cnir";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub tokens: Vec<String>,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, tokens: Vec<String>) -> Self {
        Document {
            doc_id: doc_id.into(),
            tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub query_id: String,
    pub tokens: Vec<String>,
    pub linked_entities: Vec<String>,
}

impl Query {
    pub fn new(query_id: impl Into<String>, tokens: Vec<String>) -> Self {
        Query {
            query_id: query_id.into(),
            tokens,
            linked_entities: Vec::new(),
        }
    }
}

/// Queries plus the number of blank lines skipped while loading.
#[derive(Debug, Clone, Default)]
pub struct QuerySet {
    pub queries: Vec<Query>,
    pub skipped_blank: usize,
}

/// Graded judgments. Unjudged pairs have grade 0.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct JudgmentSet {
    grades: BTreeMap<String, BTreeMap<String, u32>>,
    max_grade: u32,
}

impl JudgmentSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets a grade, returning the previous one if the pair was already judged.
    pub fn insert(&mut self, query_id: &str, doc_id: &str, grade: u32) -> Option<u32> {
        let previous = self
            .grades
            .entry(query_id.to_string())
            .or_default()
            .insert(doc_id.to_string(), grade);
        if previous == Some(self.max_grade) && grade < self.max_grade {
            self.max_grade = self.grades.values().flat_map(|m| m.values()).copied().max().unwrap_or(0);
        } else {
            self.max_grade = self.max_grade.max(grade);
        }
        previous
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> u32 {
        self.grades
            .get(query_id)
            .and_then(|m| m.get(doc_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn max_grade(&self) -> u32 {
        self.max_grade
    }

    /// Judged documents of one query, ordered by doc id.
    pub fn for_query(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.grades.get(query_id)
    }

    pub fn has_judgments(&self, query_id: &str) -> bool {
        self.grades.get(query_id).is_some_and(|m| !m.is_empty())
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.grades.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.grades.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of judged doc ids missing from `corpus`; each miss is logged.
    pub fn count_missing_docs(&self, corpus: &[Document]) -> usize {
        let ids: HashSet<&str> = corpus.iter().map(|d| d.doc_id.as_str()).collect();
        let mut missing = 0;
        for (q, docs) in &self.grades {
            for d in docs.keys() {
                if !ids.contains(d.as_str()) {
                    log::warn!("qrels: query {q} judges unknown document {d}");
                    missing += 1;
                }
            }
        }
        missing
    }
}

/// Scored documents for one query, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub query_id: String,
    pub entries: Vec<(String, f64)>,
}

impl RankedList {
    /// Sorts by score descending with ties broken by ascending doc id.
    pub fn from_scores(query_id: impl Into<String>, mut entries: Vec<(String, f64)>) -> Self {
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        RankedList {
            query_id: query_id.into(),
            entries,
        }
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(d, _)| d.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for (i, (doc, score)) in self.entries.iter().enumerate() {
            if score.is_nan() {
                return Err(Error::Invalid(format!(
                    "query {}: NaN score for {doc}",
                    self.query_id
                )));
            }
            if !seen.insert(doc.as_str()) {
                return Err(Error::Invalid(format!(
                    "query {}: document {doc} appears twice",
                    self.query_id
                )));
            }
            if i > 0 && self.entries[i - 1].1 < *score {
                return Err(Error::Invalid(format!(
                    "query {}: scores not sorted descending at rank {}",
                    self.query_id,
                    i + 1
                )));
            }
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct CorpusLine {
    id: String,
    title: String,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

pub fn load_corpus(path: &Path) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusLine =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        if rec.id.is_empty() {
            return Err(Error::parse(path, i + 1, "empty document id"));
        }
        if !ids.insert(rec.id.clone()) {
            return Err(Error::DuplicateId(rec.id));
        }
        let tokens = tokenize(&rec.title);
        if tokens.is_empty() {
            log::warn!("{}:{}: document {} has an empty title", path.display(), i + 1, rec.id);
        }
        docs.push(Document::new(rec.id, tokens));
    }
    Ok(docs)
}

pub fn load_queries(path: &Path) -> Result<QuerySet> {
    let mut set = QuerySet::default();
    let mut ids = HashSet::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            set.skipped_blank += 1;
            continue;
        }
        let Some((id, text)) = line.split_once('\t') else {
            return Err(Error::parse(path, i + 1, "expected `query_id<TAB>text`"));
        };
        let id = id.trim();
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(Error::parse(path, i + 1, format!("query {id} has no tokens")));
        }
        if !ids.insert(id.to_string()) {
            return Err(Error::DuplicateId(id.to_string()));
        }
        set.queries.push(Query::new(id, tokens));
    }
    if set.skipped_blank > 0 {
        log::warn!("{}: skipped {} blank lines", path.display(), set.skipped_blank);
    }
    Ok(set)
}

pub fn write_queries(queries: &[Query], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for q in queries {
        writeln!(w, "{}\t{}", q.query_id, q.tokens.join(" ")).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_qrels(path: &Path) -> Result<JudgmentSet> {
    let mut judg = JudgmentSet::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let [q, _, d, g] = fields.as_slice() else {
            return Err(Error::parse(path, i + 1, "expected 4 fields"));
        };
        let grade: i64 = g
            .parse()
            .map_err(|_| Error::parse(path, i + 1, format!("bad grade `{g}`")))?;
        if grade < 0 {
            return Err(Error::parse(path, i + 1, format!("negative grade {grade}")));
        }
        let grade = u32::try_from(grade)
            .map_err(|_| Error::parse(path, i + 1, format!("grade {grade} out of range")))?;
        if judg.insert(q, d, grade).is_some() {
            log::warn!("{}:{}: duplicate judgment for ({q}, {d})", path.display(), i + 1);
        }
    }
    Ok(judg)
}

pub fn write_qrels(judg: &JudgmentSet, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (q, docs) in &judg.grades {
        for (d, g) in docs {
            writeln!(w, "{q} 0 {d} {g}").map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_run(lists: &[RankedList], path: &Path, tag: &str) -> Result<()> {
    for list in lists {
        list.validate()?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for list in lists {
        for (rank, (doc, score)) in list.entries.iter().enumerate() {
            writeln!(w, "{} Q0 {} {} {:.6} {}", list.query_id, doc, rank + 1, score, tag)
                .map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a run file back into one list per query, in first-seen query order.
pub fn read_run(path: &Path) -> Result<Vec<RankedList>> {
    let mut order: Vec<String> = Vec::new();
    let mut rows: BTreeMap<String, Vec<(usize, String, f64)>> = BTreeMap::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let [q, _, d, rank, score, ..] = fields.as_slice() else {
            return Err(Error::parse(path, i + 1, "expected 6 fields"));
        };
        let rank: usize = rank
            .parse()
            .map_err(|_| Error::parse(path, i + 1, format!("bad rank `{rank}`")))?;
        let score: f64 = score
            .parse()
            .map_err(|_| Error::parse(path, i + 1, format!("bad score `{score}`")))?;
        if !rows.contains_key(*q) {
            order.push(q.to_string());
        }
        rows.entry(q.to_string())
            .or_default()
            .push((rank, d.to_string(), score));
    }
    Ok(order
        .into_iter()
        .map(|q| {
            let mut r = rows.remove(&q).unwrap_or_default();
            r.sort_by_key(|(rank, _, _)| *rank);
            RankedList {
                query_id: q,
                entries: r.into_iter().map(|(_, d, s)| (d, s)).collect(),
            }
        })
        .collect())
}
