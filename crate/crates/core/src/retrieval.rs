//! Inverted index and Okapi BM25 first-stage retrieval.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::corpus::{Document, RankedList};
use crate::error::{Error, Result};

pub const INDEX_FORMAT_VERSION: u32 = 1;
const INDEX_MAGIC: &str = "CNIR-INDEX";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

/// Term postings over a static corpus.
///
/// Documents are numbered in ascending doc id order, so posting lists
/// (sorted by that number) are also sorted by doc id.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    doc_ids: Vec<String>,
    doc_lookup: HashMap<String, u32>,
    doc_lengths: Vec<u32>,
    postings: BTreeMap<String, Vec<(u32, u32)>>,
    avg_doc_length: f64,
    total_tokens: u64,
}

impl InvertedIndex {
    pub fn build(corpus: &[Document]) -> Self {
        let mut order: Vec<&Document> = corpus.iter().collect();
        order.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));

        let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(order.len());
        for (idx, doc) in order.iter().enumerate() {
            let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
            for t in &doc.tokens {
                *tf.entry(t.as_str()).or_default() += 1;
            }
            for (t, n) in tf {
                postings.entry(t.to_string()).or_default().push((idx as u32, n));
            }
            doc_lengths.push(doc.tokens.len() as u32);
        }
        let doc_ids: Vec<String> = order.iter().map(|d| d.doc_id.clone()).collect();
        Self::assemble(doc_ids, doc_lengths, postings)
    }

    fn assemble(
        doc_ids: Vec<String>,
        doc_lengths: Vec<u32>,
        postings: BTreeMap<String, Vec<(u32, u32)>>,
    ) -> Self {
        let total_tokens: u64 = doc_lengths.iter().map(|&l| u64::from(l)).sum();
        let avg_doc_length = if doc_lengths.is_empty() {
            0.0
        } else {
            total_tokens as f64 / doc_lengths.len() as f64
        };
        let doc_lookup = doc_ids
            .iter()
            .enumerate()
            .map(|(i, d)| (d.clone(), i as u32))
            .collect();
        InvertedIndex {
            doc_ids,
            doc_lookup,
            doc_lengths,
            postings,
            avg_doc_length,
            total_tokens,
        }
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_length(&self, doc_id: &str) -> Option<u32> {
        self.doc_lookup
            .get(doc_id)
            .map(|&i| self.doc_lengths[i as usize])
    }

    /// `(doc_id, tf)` pairs for a term, sorted by doc id.
    pub fn postings(&self, term: &str) -> impl Iterator<Item = (&str, u32)> {
        self.postings
            .get(term)
            .into_iter()
            .flatten()
            .map(|&(d, tf)| (self.doc_ids[d as usize].as_str(), tf))
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    /// Total occurrences of `term` in the collection.
    pub fn collection_freq(&self, term: &str) -> u64 {
        self.postings
            .get(term)
            .map_or(0, |p| p.iter().map(|&(_, tf)| u64::from(tf)).sum())
    }

    pub fn term_freq(&self, term: &str, doc_id: &str) -> u32 {
        self.doc_lookup.get(doc_id).map_or(0, |&d| self.tf_at(term, d))
    }

    /// Smoothed IDF `ln((N - df + 0.5) / (df + 0.5) + 1)`, never negative.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.doc_count() as f64;
        let df = self.doc_freq(term) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    fn term_weight(&self, idf: f64, tf: u32, len: u32, p: Bm25Params) -> f64 {
        let tf = f64::from(tf);
        let norm = if self.avg_doc_length > 0.0 {
            1.0 - p.b + p.b * f64::from(len) / self.avg_doc_length
        } else {
            1.0
        };
        idf * tf * (p.k1 + 1.0) / (tf + p.k1 * norm)
    }

    fn tf_at(&self, term: &str, d: u32) -> u32 {
        let Some(p) = self.postings.get(term) else {
            return 0;
        };
        p.binary_search_by_key(&d, |&(doc, _)| doc)
            .map_or(0, |i| p[i].1)
    }

    fn score_at<S: AsRef<str>>(&self, query: &[S], d: u32, p: Bm25Params) -> f64 {
        let len = self.doc_lengths[d as usize];
        query
            .iter()
            .map(|t| {
                let t = t.as_ref();
                match self.tf_at(t, d) {
                    0 => 0.0,
                    tf => self.term_weight(self.idf(t), tf, len, p),
                }
            })
            .sum()
    }

    /// BM25 score of one document. Repeated query terms count once per occurrence.
    pub fn bm25_score<S: AsRef<str>>(&self, query: &[S], doc_id: &str, p: Bm25Params) -> Result<f64> {
        let &d = self
            .doc_lookup
            .get(doc_id)
            .ok_or_else(|| Error::UnknownId(doc_id.to_string()))?;
        Ok(self.score_at(query, d, p))
    }

    /// Top `k` documents containing at least one query term, ties by ascending doc id.
    pub fn retrieve_topk<S: AsRef<str>>(
        &self,
        query_id: &str,
        query: &[S],
        k: usize,
        p: Bm25Params,
    ) -> RankedList {
        let mut matching: Vec<u32> = query
            .iter()
            .filter_map(|t| self.postings.get(t.as_ref()))
            .flatten()
            .map(|&(d, _)| d)
            .collect();
        matching.sort_unstable();
        matching.dedup();
        let mut scored: Vec<(u32, f64)> = matching
            .into_iter()
            .map(|d| (d, self.score_at(query, d, p)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(k);
        RankedList {
            query_id: query_id.to_string(),
            entries: scored
                .into_iter()
                .map(|(d, s)| (self.doc_ids[d as usize].clone(), s))
                .collect(),
        }
    }

    /// Line-based format: magic/version header, one `doc` line per document,
    /// then one `term` line per posting list.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "{INDEX_MAGIC} {INDEX_FORMAT_VERSION}").map_err(io)?;
        writeln!(w, "docs {}", self.doc_ids.len()).map_err(io)?;
        for (id, len) in self.doc_ids.iter().zip(&self.doc_lengths) {
            writeln!(w, "{id}\t{len}").map_err(io)?;
        }
        writeln!(w, "terms {}", self.postings.len()).map_err(io)?;
        for (term, list) in &self.postings {
            write!(w, "{term}").map_err(io)?;
            for (d, tf) in list {
                write!(w, "\t{d}:{tf}").map_err(io)?;
            }
            writeln!(w).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines().enumerate();
        let mut next = |what: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((i, l)) => Ok((i + 1, l.map_err(|e| Error::io(path, e))?)),
                None => Err(Error::parse(path, 0, format!("unexpected end of file, expected {what}"))),
            }
        };
        let (_, header) = next("header")?;
        if header != format!("{INDEX_MAGIC} {INDEX_FORMAT_VERSION}") {
            return Err(Error::parse(path, 1, format!("unsupported index header `{header}`")));
        }
        let count = |line: (usize, String), key: &str| -> Result<usize> {
            line.1
                .strip_prefix(key)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::parse(path, line.0, format!("expected `{key} <n>`")))
        };
        let n_docs = count(next("doc count")?, "docs")?;
        let mut doc_ids = Vec::with_capacity(n_docs);
        let mut doc_lengths = Vec::with_capacity(n_docs);
        for _ in 0..n_docs {
            let (ln, line) = next("doc line")?;
            let (id, len) = line
                .split_once('\t')
                .and_then(|(id, len)| Some((id.to_string(), len.parse::<u32>().ok()?)))
                .ok_or_else(|| Error::parse(path, ln, "expected `doc_id<TAB>length`"))?;
            doc_ids.push(id);
            doc_lengths.push(len);
        }
        let n_terms = count(next("term count")?, "terms")?;
        let mut postings = BTreeMap::new();
        for _ in 0..n_terms {
            let (ln, line) = next("term line")?;
            let mut parts = line.split('\t');
            let term = parts.next().unwrap_or_default().to_string();
            let list = parts
                .map(|p| {
                    let (d, tf) = p.split_once(':')?;
                    let d: u32 = d.parse().ok()?;
                    ((d as usize) < n_docs).then_some(())?;
                    Some((d, tf.parse::<u32>().ok()?))
                })
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| Error::parse(path, ln, format!("bad postings for `{term}`")))?;
            postings.insert(term, list);
        }
        Ok(Self::assemble(doc_ids, doc_lengths, postings))
    }
}
