//! Non-learning expansion baselines over pseudo-relevant documents.

use std::collections::{BTreeMap, HashSet};

use crate::corpus::{Document, Query};
use crate::retrieval::InvertedIndex;

/// Dirichlet prior for the document likelihood in [`rm_expand`].
pub const RM_DIRICHLET_MU: f64 = 10.0;

fn top_k(mut scored: Vec<(String, f64)>, k: usize) -> Vec<String> {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.into_iter().take(k).map(|(t, _)| t).collect()
}

fn append(query: &Query, terms: Vec<String>) -> Vec<String> {
    let mut out = query.tokens.clone();
    out.extend(terms);
    out
}

/// `tf(t, PRF concatenation) * ln(N / df(t))` for each non-query PRF term.
pub fn tfidf_scores(query: &Query, prf_docs: &[&Document], index: &InvertedIndex) -> Vec<(String, f64)> {
    let in_query: HashSet<&str> = query.tokens.iter().map(String::as_str).collect();
    let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
    for d in prf_docs {
        for t in &d.tokens {
            if !in_query.contains(t.as_str()) {
                *tf.entry(t).or_default() += 1;
            }
        }
    }
    let n = index.doc_count() as f64;
    tf.into_iter()
        .filter_map(|(t, c)| {
            let df = index.doc_freq(t);
            (df > 0).then(|| (t.to_string(), f64::from(c) * (n / df as f64).ln()))
        })
        .collect()
}

/// Appends the `k` best TFIDF terms from the PRF documents, ties lexicographic.
pub fn tfidf_expand(query: &Query, prf_docs: &[&Document], index: &InvertedIndex, k: usize) -> Vec<String> {
    append(query, top_k(tfidf_scores(query, prf_docs, index), k))
}

/// Relevance-model distribution `P_rm(w)` over the PRF vocabulary.
///
/// Document weights are the Dirichlet query likelihoods `P(q|d)`; query
/// terms absent from the collection are left out of the product. Returns an
/// empty map when no PRF document has tokens.
pub fn relevance_model(query: &Query, prf_docs: &[&Document], index: &InvertedIndex) -> BTreeMap<String, f64> {
    let docs: Vec<&Document> = prf_docs.iter().copied().filter(|d| !d.tokens.is_empty()).collect();
    if docs.is_empty() {
        return BTreeMap::new();
    }
    let total = index.total_tokens() as f64;
    let log_lik: Vec<f64> = docs
        .iter()
        .map(|d| {
            let len = d.tokens.len() as f64;
            query
                .tokens
                .iter()
                .filter_map(|q| {
                    let cf = index.collection_freq(q) as f64;
                    if cf == 0.0 {
                        return None;
                    }
                    let tf = d.tokens.iter().filter(|t| *t == q).count() as f64;
                    Some(((tf + RM_DIRICHLET_MU * cf / total) / (len + RM_DIRICHLET_MU)).ln())
                })
                .sum()
        })
        .collect();
    let max = log_lik.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = log_lik.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = weights.iter().sum();

    let mut p: BTreeMap<String, f64> = BTreeMap::new();
    for (d, w) in docs.iter().zip(&weights) {
        let len = d.tokens.len() as f64;
        for t in &d.tokens {
            *p.entry(t.clone()).or_default() += w / z / len;
        }
    }
    p
}

/// RM3-style expansion: `P'(w) = lambda P_ml(w|q) + (1 - lambda) P_rm(w)`,
/// appending the top `k` non-query terms with positive `P'`.
pub fn rm_expand(query: &Query, prf_docs: &[&Document], index: &InvertedIndex, k: usize, lambda: f64) -> Vec<String> {
    let in_query: HashSet<&str> = query.tokens.iter().map(String::as_str).collect();
    let scored: Vec<(String, f64)> = relevance_model(query, prf_docs, index)
        .into_iter()
        .filter(|(t, _)| !in_query.contains(t.as_str()))
        .map(|(t, p)| (t, (1.0 - lambda) * p))
        .filter(|(_, s)| *s > 0.0)
        .collect();
    append(query, top_k(scored, k))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, text: &str) -> Document {
        Document::new(id, text.split_whitespace().map(String::from).collect())
    }

    fn query(text: &str) -> Query {
        Query::new("q", text.split_whitespace().map(String::from).collect())
    }

    fn setup() -> (Vec<Document>, InvertedIndex) {
        let docs = vec![
            doc("d1", "apple banana cherry"),
            doc("d2", "apple banana"),
            doc("d3", "apple date"),
            doc("d4", "elder fig"),
        ];
        let index = InvertedIndex::build(&docs);
        (docs, index)
    }

    #[test]
    fn tfidf_excludes_query_terms() {
        let (docs, index) = setup();
        let q = query("apple banana");
        assert_eq!(tfidf_expand(&q, &[&docs[1]], &index, 3), q.tokens);
        assert!(tfidf_expand(&q, &[], &index, 3) == q.tokens);
    }

    #[test]
    fn tfidf_ranking_and_forced_selection() {
        let (docs, index) = setup();
        let q = query("apple");
        // banana: 2 * ln(4/2); cherry: ln 4; date: ln 4  -> banana, cherry, date
        let out = tfidf_expand(&q, &[&docs[0], &docs[1], &docs[2]], &index, 2);
        assert_eq!(out, vec!["apple", "banana", "cherry"]);
        let out = tfidf_expand(&q, &[&docs[2]], &index, 3);
        assert_eq!(out, vec!["apple", "date"]);
    }

    #[test]
    fn rm_is_a_distribution() {
        let (docs, index) = setup();
        let q = query("apple cherry");
        let p = relevance_model(&q, &[&docs[0], &docs[1], &docs[2]], &index);
        let total: f64 = p.values().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rm_single_doc_collapses_to_ml() {
        let (docs, index) = setup();
        let p = relevance_model(&query("apple"), &[&docs[0]], &index);
        for v in p.values() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn rm_lambda_one_leaves_query() {
        let (docs, index) = setup();
        let q = query("apple");
        assert_eq!(rm_expand(&q, &[&docs[0], &docs[1]], &index, 3, 1.0), q.tokens);
        let out = rm_expand(&q, &[&docs[0], &docs[1]], &index, 1, 0.5);
        assert_eq!(out, vec!["apple", "banana"]);
        assert_eq!(rm_expand(&q, &[], &index, 3, 0.5), q.tokens);
    }
}
