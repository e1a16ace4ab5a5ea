//! Kernel-pooling neural ranking model.
//!
//! `f(q, d) = tanh(w_r . phi(M) + b_r)` where `M` is the query x document
//! cosine matrix and `phi_t = sum_i log max(sum_j exp(-(M_ij - mu_t)^2 / 2 sigma_t^2), eps)`.

use std::collections::HashMap;

use rand::Rng;

use crate::corpus::{JudgmentSet, RankedList};
use crate::error::{Error, Result};
use crate::lexical::{cosine_unchecked, dot, norm, EmbeddingTable, TokenId};
use crate::optim::Adam;
use crate::tensor::{Tensor, TensorSet};

/// Soft counts below this are clamped before the log.
pub const LOG_CLAMP: f64 = 1e-10;

const W_R: usize = 0;
const B_R: usize = 1;
const EMB: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct KernelBank {
    mu: Vec<f64>,
    sigma: Vec<f64>,
}

impl KernelBank {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if mu.is_empty() || mu.len() != sigma.len() {
            return Err(Error::Invalid("kernel bank needs matching, non-empty mu/sigma".into()));
        }
        if sigma.iter().any(|&s| s.is_nan() || s <= 0.0) {
            return Err(Error::Invalid("kernel widths must be positive".into()));
        }
        if mu.iter().filter(|&&m| m == 1.0).count() != 1 {
            return Err(Error::Invalid("kernel bank needs exactly one exact-match kernel (mu = 1)".into()));
        }
        Ok(KernelBank { mu, sigma })
    }

    /// One exact-match kernel (mu 1, sigma 1e-3) plus `n - 1` soft kernels
    /// (sigma 0.1) centred in equal bins over [-1, 1].
    pub fn with_kernels(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Invalid("need at least two kernels".into()));
        }
        let bin = 2.0 / (n - 1) as f64;
        let mut mu = vec![1.0];
        let mut sigma = vec![1e-3];
        for i in 0..n - 1 {
            mu.push(1.0 - bin / 2.0 - bin * i as f64);
            sigma.push(0.1);
        }
        Self::new(mu, sigma)
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }
}

impl Default for KernelBank {
    fn default() -> Self {
        Self::with_kernels(11).expect("default kernel bank is valid")
    }
}

/// Row-major `n x m` cosine matrix between query and document tokens.
pub fn interaction_matrix(query: &[TokenId], doc: &[TokenId], emb: &EmbeddingTable) -> Result<Vec<Vec<f64>>> {
    if query.is_empty() {
        return Err(Error::Invalid("empty query".into()));
    }
    if doc.is_empty() {
        return Err(Error::Invalid("empty document".into()));
    }
    Ok(query
        .iter()
        .map(|&q| doc.iter().map(|&d| cosine_unchecked(emb.row(q), emb.row(d))).collect())
        .collect())
}

fn gaussian(m: f64, mu: f64, sigma: f64) -> f64 {
    (-(m - mu) * (m - mu) / (2.0 * sigma * sigma)).exp()
}

/// `phi(M)`, one feature per kernel.
pub fn kernel_pool(m: &[Vec<f64>], bank: &KernelBank) -> Vec<f64> {
    let mut phi = vec![0.0; bank.len()];
    for row in m {
        for (t, f) in phi.iter_mut().enumerate() {
            let k: f64 = row.iter().map(|&x| gaussian(x, bank.mu[t], bank.sigma[t])).sum();
            *f += k.max(LOG_CLAMP).ln();
        }
    }
    phi
}

/// Parameters: `w_r` (1 x T), `b_r` (1 x 1) and the word embedding table.
#[derive(Debug, Clone)]
pub struct KnrmModel {
    pub bank: KernelBank,
    pub params: TensorSet,
    pub train_embeddings: bool,
}

struct Forward {
    m: Vec<Vec<f64>>,
    /// `soft[i][t]` = sum_j K_t(M_ij), before clamping.
    soft: Vec<Vec<f64>>,
    phi: Vec<f64>,
    f: f64,
}

impl KnrmModel {
    /// `w_r` drawn uniformly from [-0.01, 0.01], `b_r = 0`.
    pub fn new<R: Rng>(bank: KernelBank, embeddings: &EmbeddingTable, train_embeddings: bool, rng: &mut R) -> Self {
        let t = bank.len();
        let mut w = Tensor::zeros("w_r", 1, t);
        for v in &mut w.data {
            *v = rng.random_range(-0.01..=0.01);
        }
        let emb = Tensor {
            name: "embeddings".into(),
            rows: embeddings.rows(),
            cols: embeddings.dim(),
            data: embeddings.as_slice().to_vec(),
        };
        KnrmModel {
            bank,
            params: TensorSet::new(vec![w, Tensor::zeros("b_r", 1, 1), emb]),
            train_embeddings,
        }
    }

    pub fn w_r(&self) -> &[f64] {
        &self.params.tensors[W_R].data
    }

    pub fn w_r_mut(&mut self) -> &mut [f64] {
        &mut self.params.tensors[W_R].data
    }

    pub fn b_r(&self) -> f64 {
        self.params.tensors[B_R].data[0]
    }

    pub fn set_b_r(&mut self, b: f64) {
        self.params.tensors[B_R].data[0] = b;
    }

    fn emb_row(&self, id: TokenId) -> &[f64] {
        self.params.tensors[EMB].row(id)
    }

    /// Copy of the current embedding table.
    pub fn embeddings(&self) -> EmbeddingTable {
        let t = &self.params.tensors[EMB];
        EmbeddingTable::from_rows(crate::lexical::EmbeddingKind::Word, t.cols, t.data.clone())
            .expect("embedding tensor is rectangular")
    }

    fn trainable(&self) -> [bool; 3] {
        [true, true, self.train_embeddings]
    }

    fn forward(&self, query: &[TokenId], doc: &[TokenId]) -> Option<Forward> {
        if query.is_empty() || doc.is_empty() {
            return None;
        }
        let m: Vec<Vec<f64>> = query
            .iter()
            .map(|&q| {
                doc.iter()
                    .map(|&d| cosine_unchecked(self.emb_row(q), self.emb_row(d)))
                    .collect()
            })
            .collect();
        let t = self.bank.len();
        let mut soft = vec![vec![0.0; t]; m.len()];
        let mut phi = vec![0.0; t];
        for (i, row) in m.iter().enumerate() {
            for k in 0..t {
                let s: f64 = row
                    .iter()
                    .map(|&x| gaussian(x, self.bank.mu[k], self.bank.sigma[k]))
                    .sum();
                soft[i][k] = s;
                phi[k] += s.max(LOG_CLAMP).ln();
            }
        }
        let f = (dot(self.w_r(), &phi) + self.b_r()).tanh();
        Some(Forward { m, soft, phi, f })
    }

    /// Relevance score in (-1, 1); `None` for an empty query or document.
    pub fn score(&self, query: &[TokenId], doc: &[TokenId]) -> Option<f64> {
        self.forward(query, doc).map(|f| f.f)
    }

    pub fn features(&self, query: &[TokenId], doc: &[TokenId]) -> Option<Vec<f64>> {
        self.forward(query, doc).map(|f| f.phi)
    }

    /// `max(0, 1 - f(q, d+) + f(q, d-))`; `None` if either document is unscorable.
    pub fn pairwise_loss(&self, query: &[TokenId], plus: &[TokenId], minus: &[TokenId]) -> Option<f64> {
        Some((1.0 - self.score(query, plus)? + self.score(query, minus)?).max(0.0))
    }

    /// Adds the hinge gradient of one pair into `grads` and returns the loss.
    pub fn accumulate_pair_gradient(
        &self,
        query: &[TokenId],
        plus: &[TokenId],
        minus: &[TokenId],
        grads: &mut TensorSet,
    ) -> Option<f64> {
        let fp = self.forward(query, plus)?;
        let fm = self.forward(query, minus)?;
        let loss = 1.0 - fp.f + fm.f;
        if loss <= 0.0 {
            return Some(0.0);
        }
        self.backward(query, plus, &fp, -1.0, grads);
        self.backward(query, minus, &fm, 1.0, grads);
        Some(loss)
    }

    /// Gradient of one pair's hinge loss as a fresh tensor set.
    pub fn pair_gradients(&self, query: &[TokenId], plus: &[TokenId], minus: &[TokenId]) -> Result<(f64, TensorSet)> {
        let mut g = self.params.zeros_like();
        let loss = self
            .accumulate_pair_gradient(query, plus, minus, &mut g)
            .ok_or_else(|| Error::Invalid("pair contains an empty query or document".into()))?;
        g.check_finite()?;
        Ok((loss, g))
    }

    fn backward(&self, query: &[TokenId], doc: &[TokenId], fw: &Forward, dloss_df: f64, grads: &mut TensorSet) {
        let dz = dloss_df * (1.0 - fw.f * fw.f);
        for (g, p) in grads.tensors[W_R].data.iter_mut().zip(&fw.phi) {
            *g += dz * p;
        }
        grads.tensors[B_R].data[0] += dz;
        if !self.train_embeddings {
            return;
        }

        let t = self.bank.len();
        let w = self.w_r();
        let dim = self.params.tensors[EMB].cols;
        for (i, &qi) in query.iter().enumerate() {
            // d loss / d K_t(M_i), zero where the log was clamped.
            let dsoft: Vec<f64> = (0..t)
                .map(|k| {
                    let s = fw.soft[i][k];
                    if s > LOG_CLAMP {
                        dz * w[k] / s
                    } else {
                        0.0
                    }
                })
                .collect();
            let a = self.emb_row(qi);
            let na = norm(a);
            for (j, &dj) in doc.iter().enumerate() {
                let mij = fw.m[i][j];
                let dm: f64 = (0..t)
                    .map(|k| {
                        let (mu, sg) = (self.bank.mu[k], self.bank.sigma[k]);
                        dsoft[k] * gaussian(mij, mu, sg) * (-(mij - mu) / (sg * sg))
                    })
                    .sum();
                if dm == 0.0 {
                    continue;
                }
                let b = self.emb_row(dj);
                let nb = norm(b);
                if na == 0.0 || nb == 0.0 {
                    continue;
                }
                let inv = 1.0 / (na * nb);
                // Unclamped cosine: recompute so a == b yields the exact zero gradient.
                let cos = dot(a, b) * inv;
                let emb_grad = &mut grads.tensors[EMB];
                for k in 0..dim {
                    let da = dm * (b[k] * inv - cos * a[k] / (na * na));
                    let db = dm * (a[k] * inv - cos * b[k] / (nb * nb));
                    emb_grad.data[qi * dim + k] += da;
                    emb_grad.data[dj * dim + k] += db;
                }
            }
        }
    }

    /// Reorders `pool` by score, ties by doc id. Documents without tokens
    /// (or unknown to `docs`) get `-inf` and sink to the bottom.
    pub fn rerank(&self, query: &[TokenId], pool: &RankedList, docs: &EncodedCorpus) -> RankedList {
        rerank_with(|d| self.score(query, d), pool, docs)
    }

    /// Single-example loss/gradient helper keyed by trainable flags.
    pub fn trainable_mask(&self) -> Vec<bool> {
        self.trainable().to_vec()
    }
}

pub(crate) fn rerank_with<F>(score: F, pool: &RankedList, docs: &EncodedCorpus) -> RankedList
where
    F: Fn(&[TokenId]) -> Option<f64>,
{
    let entries = pool
        .doc_ids()
        .map(|d| {
            let s = docs.get(d).and_then(|tokens| score(tokens)).unwrap_or(f64::NEG_INFINITY);
            (d.to_string(), s)
        })
        .collect();
    RankedList::from_scores(pool.query_id.clone(), entries)
}

/// Token-id view of a corpus, keyed by doc id.
#[derive(Debug, Clone, Default)]
pub struct EncodedCorpus {
    docs: HashMap<String, Vec<TokenId>>,
}

impl EncodedCorpus {
    pub fn new(docs: &[crate::corpus::Document], vocab: &crate::lexical::Vocabulary) -> Self {
        EncodedCorpus {
            docs: docs
                .iter()
                .map(|d| (d.doc_id.clone(), vocab.encode(&d.tokens)))
                .collect(),
        }
    }

    pub fn get(&self, doc_id: &str) -> Option<&[TokenId]> {
        self.docs.get(doc_id).map(Vec::as_slice)
    }
}

/// A (more relevant, less relevant) document pair for one query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingPair {
    pub query_id: String,
    pub plus: String,
    pub minus: String,
}

impl TrainingPair {
    pub fn new(query_id: &str, plus: &str, minus: &str, judg: &JudgmentSet) -> Result<Self> {
        let (gp, gm) = (judg.grade(query_id, plus), judg.grade(query_id, minus));
        if gp <= gm {
            return Err(Error::Invalid(format!(
                "pair ({plus}, {minus}) for {query_id}: grade {gp} is not above {gm}"
            )));
        }
        Ok(TrainingPair {
            query_id: query_id.to_string(),
            plus: plus.to_string(),
            minus: minus.to_string(),
        })
    }
}

/// Every ordered pair in `pool` with strictly different grades, in pool order.
pub fn build_pairs(pool: &RankedList, judg: &JudgmentSet) -> Vec<TrainingPair> {
    let grades: Vec<(&str, u32)> = pool
        .doc_ids()
        .map(|d| (d, judg.grade(&pool.query_id, d)))
        .collect();
    let mut pairs = Vec::new();
    for &(p, gp) in &grades {
        for &(m, gm) in &grades {
            if gp > gm {
                pairs.push(TrainingPair {
                    query_id: pool.query_id.clone(),
                    plus: p.to_string(),
                    minus: m.to_string(),
                });
            }
        }
    }
    pairs
}

/// Extension point for alternative rankers: score documents and learn from
/// pairwise preferences.
pub trait Ranker {
    fn score(&self, query: &[TokenId], doc: &[TokenId]) -> Option<f64>;

    /// One optimizer step on a batch of `(query, plus, minus)` examples;
    /// returns the mean hinge loss.
    fn train_batch(&mut self, batch: &[(&[TokenId], &[TokenId], &[TokenId])]) -> Result<f64>;

    fn rerank(&self, query: &[TokenId], pool: &RankedList, docs: &EncodedCorpus) -> RankedList {
        rerank_with(|d| self.score(query, d), pool, docs)
    }
}

/// A [`KnrmModel`] with its Adam state.
#[derive(Debug, Clone)]
pub struct KnrmLearner {
    pub model: KnrmModel,
    pub adam: Adam,
    grads: TensorSet,
}

impl KnrmLearner {
    pub fn new(model: KnrmModel, lr: f64) -> Self {
        let adam = Adam::new(&model.params, lr);
        let grads = model.params.zeros_like();
        KnrmLearner { model, adam, grads }
    }

    pub fn into_model(self) -> KnrmModel {
        self.model
    }
}

impl Ranker for KnrmLearner {
    fn score(&self, query: &[TokenId], doc: &[TokenId]) -> Option<f64> {
        self.model.score(query, doc)
    }

    fn train_batch(&mut self, batch: &[(&[TokenId], &[TokenId], &[TokenId])]) -> Result<f64> {
        if batch.is_empty() {
            return Ok(0.0);
        }
        self.grads.fill(0.0);
        let mut total = 0.0;
        let mut active = 0usize;
        for (q, p, m) in batch {
            if let Some(l) = self.model.accumulate_pair_gradient(q, p, m, &mut self.grads) {
                total += l;
                active += usize::from(l > 0.0);
            }
        }
        if active > 0 {
            self.grads.scale(1.0 / batch.len() as f64);
            self.grads.check_finite()?;
            let mask = self.model.trainable_mask();
            self.adam.step(&mut self.model.params, &self.grads, &mask);
            // Padding stays the zero vector.
            self.model.params.tensors[EMB].row_mut(crate::lexical::PAD).fill(0.0);
        }
        Ok(total / batch.len() as f64)
    }
}

impl Ranker for KnrmModel {
    fn score(&self, query: &[TokenId], doc: &[TokenId]) -> Option<f64> {
        KnrmModel::score(self, query, doc)
    }

    fn train_batch(&mut self, _batch: &[(&[TokenId], &[TokenId], &[TokenId])]) -> Result<f64> {
        Err(Error::Invalid("wrap the model in a KnrmLearner to train it".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexical::{EmbeddingKind, Vocabulary};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn table(rows: &[[f64; 2]]) -> EmbeddingTable {
        let mut data = vec![0.0, 0.0, 0.0, 0.0];
        for r in rows {
            data.extend_from_slice(r);
        }
        EmbeddingTable::from_rows(EmbeddingKind::Word, 2, data).unwrap()
    }

    fn model(emb: &EmbeddingTable) -> KnrmModel {
        KnrmModel::new(KernelBank::default(), emb, true, &mut ChaCha8Rng::seed_from_u64(0))
    }

    #[test]
    fn default_bank_shape() {
        let b = KernelBank::default();
        assert_eq!(b.len(), 11);
        assert_eq!(b.mu()[0], 1.0);
        assert_eq!(b.sigma()[0], 1e-3);
        let expected = [0.9, 0.7, 0.5, 0.3, 0.1, -0.1, -0.3, -0.5, -0.7, -0.9];
        for (m, e) in b.mu()[1..].iter().zip(expected) {
            assert!((m - e).abs() < 1e-12);
        }
        assert!(b.sigma()[1..].iter().all(|&s| s == 0.1));
        assert!(KernelBank::new(vec![0.5], vec![0.1]).is_err());
        assert!(KernelBank::new(vec![1.0], vec![0.0]).is_err());
    }

    #[test]
    fn interaction_examples() {
        let emb = table(&[[1.0, 0.0], [0.0, 0.0]]);
        assert_eq!(interaction_matrix(&[2], &[2], &emb).unwrap(), vec![vec![1.0]]);
        assert_eq!(interaction_matrix(&[2], &[2, 3], &emb).unwrap(), vec![vec![1.0, 0.0]]);
        assert!(interaction_matrix(&[], &[2], &emb).is_err());
        assert!(interaction_matrix(&[2], &[], &emb).is_err());
    }

    #[test]
    fn pooling_at_kernel_mean() {
        let bank = KernelBank::new(vec![1.0, 0.3], vec![1e-3, 0.1]).unwrap();
        let phi = kernel_pool(&[vec![0.3]], &bank);
        assert_eq!(phi[1], 0.0);
        let phi = kernel_pool(&[vec![0.3; 5]], &bank);
        assert!((phi[1] - 5f64.ln()).abs() < 1e-12);
        // no mass anywhere near the exact kernel: clamped log
        assert_eq!(phi[0], LOG_CLAMP.ln() * 1.0);
    }

    #[test]
    fn zero_weights_score_zero_and_range() {
        let emb = table(&[[1.0, 0.2], [0.3, 1.0], [-1.0, 0.5]]);
        let mut m = model(&emb);
        m.w_r_mut().fill(0.0);
        assert_eq!(m.score(&[2, 3], &[4, 2]), Some(0.0));
        let m = model(&emb);
        let s = m.score(&[2, 3], &[4, 2, 3]).unwrap();
        assert!(s > -1.0 && s < 1.0);
        assert_eq!(m.score(&[2], &[]), None);
    }

    #[test]
    fn hinge_values() {
        let emb = table(&[[1.0, 0.0], [0.0, 1.0]]);
        let mut m = model(&emb);
        m.w_r_mut().fill(0.0);
        assert_eq!(m.pairwise_loss(&[2], &[2], &[3]), Some(1.0));
        // f = tanh(b) for both documents; the hinge is then exactly 1.
        m.set_b_r(0.4);
        assert_eq!(m.pairwise_loss(&[2], &[2], &[3]), Some(1.0));
    }

    #[test]
    fn hinge_arithmetic() {
        let hinge = |fp: f64, fm: f64| (1.0f64 - fp + fm).max(0.0);
        assert_eq!(hinge(0.75, -0.25), 0.0);
        assert_eq!(hinge(0.3, 0.3), 1.0);
        assert!((hinge(-0.2, 0.3) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn zero_loss_pair_has_zero_gradient() {
        let emb = table(&[[1.0, 0.0], [0.0, 1.0]]);
        let mut m = model(&emb);
        m.w_r_mut().fill(0.0);
        m.w_r_mut()[0] = 1.0;
        // d+ exact match: phi_0 = 0; d- no match: phi_0 = ln(1e-10) -> f(d-) ~ -1
        let (loss, g) = m.pair_gradients(&[2], &[2], &[3]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.tensors.iter().all(|t| t.data.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn w_r_gradient_sign_flips_between_branches() {
        let emb = table(&[[1.0, 0.0], [0.0, 1.0]]);
        let mut m = model(&emb);
        m.w_r_mut().fill(0.0);
        let mut gp = m.params.zeros_like();
        let fw = m.forward(&[2], &[2]).unwrap();
        m.backward(&[2], &[2], &fw, -1.0, &mut gp);
        let mut gm = m.params.zeros_like();
        m.backward(&[2], &[2], &fw, 1.0, &mut gm);
        for (a, b) in gp.tensors[W_R].data.iter().zip(&gm.tensors[W_R].data) {
            assert_eq!(*a, -*b);
        }
    }

    #[test]
    fn rerank_contract() {
        let vocab = Vocabulary::from_tokens(["a", "b", "c"]);
        let docs = vec![
            crate::corpus::Document::new("d1", vec!["a".into()]),
            crate::corpus::Document::new("d2", vec!["b".into()]),
            crate::corpus::Document::new("d3", vec![]),
        ];
        let enc = EncodedCorpus::new(&docs, &vocab);
        let emb = table(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
        let mut m = model(&emb);
        let pool = RankedList::from_scores("q", vec![("d3".into(), 3.0), ("d2".into(), 2.0), ("d1".into(), 1.0)]);

        m.w_r_mut().fill(0.0);
        let r = m.rerank(&[2], &pool, &enc);
        assert_eq!(r.doc_ids().collect::<Vec<_>>(), vec!["d1", "d2", "d3"]);

        let single = RankedList::from_scores("q", vec![("d2".into(), 1.0)]);
        assert_eq!(m.rerank(&[2], &single, &enc).doc_ids().collect::<Vec<_>>(), vec!["d2"]);
    }

    #[test]
    fn pairs_require_grade_order() {
        let mut j = JudgmentSet::new();
        j.insert("q", "a", 2);
        j.insert("q", "b", 1);
        assert!(TrainingPair::new("q", "a", "b", &j).is_ok());
        assert!(TrainingPair::new("q", "b", "a", &j).is_err());
        assert!(TrainingPair::new("q", "c", "d", &j).is_err());
        let pool = RankedList::from_scores("q", vec![("a".into(), 1.0), ("b".into(), 0.5), ("c".into(), 0.1)]);
        let pairs = build_pairs(&pool, &j);
        assert_eq!(pairs.len(), 3);
    }
}
