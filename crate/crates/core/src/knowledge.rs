//! Knowledge graph, commonness entity linking, and candidate expansion
//! terms (PRF terms plus knowledge terms) for each query.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use crate::corpus::{Document, Query};
use crate::error::{Error, Result};
use crate::lexical::{cosine_unchecked, tokenize, EmbeddingTable, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Relation {
    Subclass,
    InstanceOf,
    Same,
    Related,
}

impl Relation {
    pub fn as_str(self) -> &'static str {
        match self {
            Relation::Subclass => "subclass",
            Relation::InstanceOf => "instanceof",
            Relation::Same => "same",
            Relation::Related => "related",
        }
    }
}

impl FromStr for Relation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "subclass" => Ok(Relation::Subclass),
            "instanceof" => Ok(Relation::InstanceOf),
            "same" => Ok(Relation::Same),
            "related" => Ok(Relation::Related),
            other => Err(Error::Invalid(format!("unknown relation `{other}`"))),
        }
    }
}

/// Entities with surface names and typed edges. Neighbor queries treat
/// edges as undirected.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeGraph {
    names: BTreeMap<String, Vec<String>>,
    edges: Vec<(String, Relation, String)>,
    adjacency: BTreeMap<String, BTreeSet<String>>,
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_entity(&mut self, id: &str, surface: Vec<String>) {
        self.names.insert(id.to_string(), surface);
    }

    pub fn add_edge(&mut self, head: &str, rel: Relation, tail: &str) -> Result<()> {
        for e in [head, tail] {
            if !self.names.contains_key(e) {
                return Err(Error::UnknownId(e.to_string()));
            }
        }
        self.edges.push((head.to_string(), rel, tail.to_string()));
        self.adjacency
            .entry(head.to_string())
            .or_default()
            .insert(tail.to_string());
        self.adjacency
            .entry(tail.to_string())
            .or_default()
            .insert(head.to_string());
        Ok(())
    }

    pub fn contains(&self, id: &str) -> bool {
        self.names.contains_key(id)
    }

    pub fn surface(&self, id: &str) -> Option<&[String]> {
        self.names.get(id).map(Vec::as_slice)
    }

    /// Entity ids in ascending order.
    pub fn entity_ids(&self) -> impl Iterator<Item = &str> {
        self.names.keys().map(String::as_str)
    }

    pub fn edges(&self) -> &[(String, Relation, String)] {
        &self.edges
    }

    /// Reads `entity_id \t surface` names and `head \t relation \t tail` edges.
    pub fn load(names: &Path, edges: &Path) -> Result<Self> {
        let mut kg = KnowledgeGraph::new();
        for (i, line) in read_lines(names)?.into_iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (id, surface) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(names, i + 1, "expected `entity_id<TAB>surface`"))?;
            if kg.contains(id) {
                return Err(Error::DuplicateId(id.to_string()));
            }
            kg.add_entity(id, tokenize(surface));
        }
        for (i, line) in read_lines(edges)?.into_iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            let [h, r, t] = f.as_slice() else {
                return Err(Error::parse(edges, i + 1, "expected `head<TAB>relation<TAB>tail`"));
            };
            let rel = r
                .parse::<Relation>()
                .map_err(|e| Error::parse(edges, i + 1, e.to_string()))?;
            kg.add_edge(h, rel, t)?;
        }
        Ok(kg)
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(file)
        .lines()
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(path, e))
}

/// Surface form (token sequence) to candidate entities with commonness,
/// most common first.
#[derive(Debug, Clone, Default)]
pub struct EntityDictionary {
    entries: HashMap<Vec<String>, Vec<(String, f64)>>,
    max_span: usize,
}

impl EntityDictionary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, surface: Vec<String>, entity: &str, commonness: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&commonness) {
            return Err(Error::Invalid(format!(
                "commonness {commonness} for `{}` outside [0, 1]",
                surface.join(" ")
            )));
        }
        if surface.is_empty() {
            return Err(Error::Invalid("empty surface form".into()));
        }
        self.max_span = self.max_span.max(surface.len());
        let list = self.entries.entry(surface.clone()).or_default();
        list.retain(|(e, _)| e != entity);
        list.push((entity.to_string(), commonness));
        list.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let total: f64 = list.iter().map(|(_, c)| c).sum();
        if total > 1.0 + 1e-6 {
            return Err(Error::Invalid(format!(
                "commonness for `{}` sums to {total}",
                surface.join(" ")
            )));
        }
        Ok(())
    }

    pub fn candidates(&self, surface: &[String]) -> Option<&[(String, f64)]> {
        self.entries.get(surface).map(Vec::as_slice)
    }

    /// Reads `surface \t entity_id \t commonness` lines.
    pub fn load(path: &Path) -> Result<Self> {
        let mut dict = EntityDictionary::new();
        for (i, line) in read_lines(path)?.into_iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            let [surface, entity, c] = f.as_slice() else {
                return Err(Error::parse(path, i + 1, "expected `surface<TAB>entity<TAB>commonness`"));
            };
            let c: f64 = c
                .trim()
                .parse()
                .map_err(|_| Error::parse(path, i + 1, format!("bad commonness `{c}`")))?;
            dict.insert(tokenize(surface), entity, c)
                .map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        }
        Ok(dict)
    }
}

/// Greedy left-to-right longest-match linking; each span resolves to its
/// most common entity.
pub fn link_entities(query: &Query, dict: &EntityDictionary) -> Query {
    let tokens = &query.tokens;
    let mut linked: Vec<String> = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let longest = dict.max_span.min(tokens.len() - i);
        let hit = (1..=longest).rev().find_map(|len| {
            dict.candidates(&tokens[i..i + len])
                .and_then(|c| c.first())
                .map(|(e, _)| (len, e))
        });
        match hit {
            Some((len, entity)) => {
                if !linked.contains(entity) {
                    linked.push(entity.clone());
                }
                i += len;
            }
            None => i += 1,
        }
    }
    Query {
        linked_entities: linked,
        ..query.clone()
    }
}

/// One-hop neighbors over every relation, excluding the inputs, sorted by id.
pub fn neighbor_entities<S: AsRef<str>>(kg: &KnowledgeGraph, entity_ids: &[S]) -> Result<Vec<String>> {
    let input: HashSet<&str> = entity_ids.iter().map(AsRef::as_ref).collect();
    let mut out = BTreeSet::new();
    for e in entity_ids {
        let e = e.as_ref();
        if !kg.contains(e) {
            return Err(Error::UnknownId(e.to_string()));
        }
        for n in kg.adjacency.get(e).into_iter().flatten() {
            if !input.contains(n.as_str()) {
                out.insert(n.clone());
            }
        }
    }
    Ok(out.into_iter().collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateTermSet {
    pub query_id: String,
    pub prf_terms: Vec<String>,
    pub know_terms: Vec<String>,
}

impl CandidateTermSet {
    /// PRF terms followed by knowledge terms.
    pub fn all(&self) -> Vec<String> {
        self.prf_terms.iter().chain(&self.know_terms).cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.prf_terms.len() + self.know_terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Unique PRF tokens not in the query, in first-occurrence order.
pub fn prf_terms(query: &Query, prf_docs: &[&Document]) -> Vec<String> {
    let mut seen: HashSet<&str> = query.tokens.iter().map(String::as_str).collect();
    let mut out = Vec::new();
    for d in prf_docs {
        for t in &d.tokens {
            if seen.insert(t.as_str()) {
                out.push(t.clone());
            }
        }
    }
    out
}

/// Builds the candidate set for one query.
///
/// Knowledge terms are surface tokens of the neighbors of the query's linked
/// entities, minus query and PRF terms, ranked by their best cosine with any
/// query token (ties lexicographic) and cut to `know_top`. Linked entities
/// missing from the graph contribute nothing.
pub fn build_candidates(
    query: &Query,
    prf_docs: &[&Document],
    kg: &KnowledgeGraph,
    vocab: &Vocabulary,
    word_emb: &EmbeddingTable,
    know_top: usize,
) -> CandidateTermSet {
    let prf = prf_terms(query, prf_docs);
    let known: Vec<&str> = query
        .linked_entities
        .iter()
        .map(String::as_str)
        .filter(|e| kg.contains(e))
        .collect();
    let neighbors = neighbor_entities(kg, &known).unwrap_or_default();

    let mut excluded: HashSet<&str> = query.tokens.iter().map(String::as_str).collect();
    excluded.extend(prf.iter().map(String::as_str));
    let mut pool: Vec<&str> = Vec::new();
    for n in &neighbors {
        for t in kg.surface(n).unwrap_or_default() {
            if excluded.insert(t.as_str()) {
                pool.push(t.as_str());
            }
        }
    }

    let query_rows: Vec<&[f64]> = query
        .tokens
        .iter()
        .map(|t| word_emb.row(vocab.id(t)))
        .collect();
    let mut scored: Vec<(f64, &str)> = pool
        .into_iter()
        .map(|t| {
            let row = word_emb.row(vocab.id(t));
            let best = query_rows
                .iter()
                .map(|q| cosine_unchecked(row, q))
                .fold(f64::NEG_INFINITY, f64::max);
            (best, t)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    scored.truncate(know_top);

    CandidateTermSet {
        query_id: query.query_id.clone(),
        prf_terms: prf,
        know_terms: scored.into_iter().map(|(_, t)| t.to_string()).collect(),
    }
}
