//! The query reformulator: a CNN query encoder, a candidate-term MLP and a
//! softmax scoring head, trained by REINFORCE with Adagrad.

use rand::Rng;

use crate::error::{Error, Result};
use crate::knowledge::CandidateTermSet;
use crate::lexical::{dot, EmbeddingTable, Vocabulary};
use crate::corpus::Query;
use crate::optim::Adagrad;
use crate::tensor::{Tensor, TensorSet};

/// Convolution window sizes.
pub const WINDOWS: [usize; 3] = [1, 2, 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PolicyShape {
    pub input_dim: usize,
    pub conv_layers: usize,
    /// Feature maps per window size.
    pub maps: usize,
    pub mlp_units: usize,
    pub hidden: usize,
}

impl PolicyShape {
    pub fn new(input_dim: usize, conv_layers: usize) -> Self {
        PolicyShape {
            input_dim,
            conv_layers,
            maps: 50,
            mlp_units: 50,
            hidden: 50,
        }
    }

    pub fn query_dim(&self) -> usize {
        WINDOWS.len() * self.maps
    }

    pub fn state_dim(&self) -> usize {
        self.query_dim() + self.mlp_units
    }
}

/// Word and entity embeddings as seen by the policy. Both tables share one
/// dimension so they can be stacked into a single input sequence.
#[derive(Debug, Clone)]
pub struct Lexicon {
    pub vocab: Vocabulary,
    pub word_emb: EmbeddingTable,
    pub entity_vocab: Vocabulary,
    pub entity_emb: EmbeddingTable,
}

impl Lexicon {
    pub fn new(
        vocab: Vocabulary,
        word_emb: EmbeddingTable,
        entity_vocab: Vocabulary,
        entity_emb: EmbeddingTable,
    ) -> Result<Self> {
        if word_emb.dim() != entity_emb.dim() {
            return Err(Error::Dimension(format!(
                "word embeddings have dimension {}, entity embeddings {}",
                word_emb.dim(),
                entity_emb.dim()
            )));
        }
        if word_emb.rows() != vocab.len() || entity_emb.rows() != entity_vocab.len() {
            return Err(Error::Dimension("embedding rows do not match vocabulary size".into()));
        }
        Ok(Lexicon {
            vocab,
            word_emb,
            entity_vocab,
            entity_emb,
        })
    }

    pub fn dim(&self) -> usize {
        self.word_emb.dim()
    }

    /// Query word vectors followed by linked-entity vectors. Entities without
    /// an embedding row are skipped.
    pub fn query_sequence(&self, query: &Query) -> Vec<Vec<f64>> {
        let words = query.tokens.iter().map(|t| self.word_emb.row(self.vocab.id(t)).to_vec());
        let ents = query
            .linked_entities
            .iter()
            .filter_map(|e| self.entity_vocab.get(e))
            .map(|id| self.entity_emb.row(id).to_vec());
        words.chain(ents).collect()
    }

    pub fn term_vector(&self, term: &str) -> &[f64] {
        self.word_emb.row(self.vocab.id(term))
    }
}

struct ConvCache {
    input: Vec<Vec<f64>>,
    /// Post-ReLU activations, `n x (3 * maps)`.
    act: Vec<Vec<f64>>,
    /// For each output position and channel, the source row in `act`.
    arg: Vec<Vec<usize>>,
}

struct CandCache {
    c: Vec<f64>,
    c_prime: Vec<f64>,
    hidden: Vec<f64>,
}

/// Cached forward pass for one query and its candidate set.
pub struct PolicyForward {
    layers: Vec<ConvCache>,
    pub query_repr: Vec<f64>,
    cands: Vec<CandCache>,
    pub logits: Vec<f64>,
}

impl PolicyForward {
    pub fn n_candidates(&self) -> usize {
        self.logits.len()
    }

    /// `s_j = [q_hat; c'_j]`.
    pub fn state(&self, j: usize) -> Vec<f64> {
        let mut s = self.query_repr.clone();
        s.extend_from_slice(&self.cands[j].c_prime);
        s
    }

    pub fn probabilities(&self) -> Result<Vec<f64>> {
        softmax(&self.logits)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReformulationAction {
    pub chosen_terms: Vec<String>,
    /// Positions of the chosen terms in `CandidateTermSet::all()`.
    pub chosen: Vec<usize>,
    pub log_prob_sum: f64,
    pub reformulated_query: Vec<String>,
}

impl ReformulationAction {
    pub fn identity(query: &Query) -> Self {
        ReformulationAction {
            chosen_terms: Vec::new(),
            chosen: Vec::new(),
            log_prob_sum: 0.0,
            reformulated_query: query.tokens.clone(),
        }
    }

    fn from_indices(query: &Query, terms: &[String], chosen: Vec<usize>, log_prob_sum: f64) -> Self {
        let chosen_terms: Vec<String> = chosen.iter().map(|&i| terms[i].clone()).collect();
        let mut reformulated_query = query.tokens.clone();
        reformulated_query.extend(chosen_terms.iter().cloned());
        ReformulationAction {
            chosen_terms,
            chosen,
            log_prob_sum,
            reformulated_query,
        }
    }
}

/// Numerically stable softmax. Errors on an empty input.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Invalid("softmax over an empty candidate set".into()));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / z).collect())
}

/// Softmax restricted to `mask`; masked-out entries get probability 0.
fn masked_softmax(logits: &[f64], mask: &[bool]) -> Vec<f64> {
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(l, _)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(l, &m)| if m { (l - max).exp() } else { 0.0 })
        .collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn draws(n: usize, k: usize, without_replacement: bool) -> usize {
    if n == 0 {
        0
    } else if without_replacement {
        k.min(n)
    } else {
        k
    }
}

/// Draws `k` candidate indices; returns them with the summed log probability.
pub fn sample_indices<R: Rng>(logits: &[f64], k: usize, without_replacement: bool, rng: &mut R) -> (Vec<usize>, f64) {
    let n = logits.len();
    let mut mask = vec![true; n];
    let mut chosen = Vec::new();
    let mut log_prob = 0.0;
    for _ in 0..draws(n, k, without_replacement) {
        let p = masked_softmax(logits, &mask);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &pi) in p.iter().enumerate() {
            if pi == 0.0 {
                continue;
            }
            acc += pi;
            pick = Some(i);
            if u < acc {
                break;
            }
        }
        let pick = pick.expect("at least one candidate remains");
        log_prob += p[pick].ln();
        chosen.push(pick);
        if without_replacement {
            mask[pick] = false;
        }
    }
    (chosen, log_prob)
}

/// `log pi(action)` under the sequential (optionally renormalized) scheme.
pub fn log_prob(logits: &[f64], chosen: &[usize], without_replacement: bool) -> f64 {
    let mut mask = vec![true; logits.len()];
    let mut total = 0.0;
    for &a in chosen {
        total += masked_softmax(logits, &mask)[a].ln();
        if without_replacement {
            mask[a] = false;
        }
    }
    total
}

/// Gradient of [`log_prob`] with respect to the logits.
pub fn log_prob_dlogits(logits: &[f64], chosen: &[usize], without_replacement: bool) -> Vec<f64> {
    let mut mask = vec![true; logits.len()];
    let mut grad = vec![0.0; logits.len()];
    for &a in chosen {
        let p = masked_softmax(logits, &mask);
        for (g, pi) in grad.iter_mut().zip(&p) {
            *g -= pi;
        }
        grad[a] += 1.0;
        if without_replacement {
            mask[a] = false;
        }
    }
    grad
}

/// Indices of the `k` largest logits, ties by index.
pub fn greedy_indices(logits: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// One sampled episode: chosen candidate indices and the reward they earned.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub chosen: Vec<usize>,
    pub reward: f64,
}

/// REINFORCE direction in logit space for one query,
/// `(1/M) sum_m (R_m - baseline) d log pi(a_m) / d logits`.
///
/// Returns `None` when the update is exactly zero: no episodes, or the mean
/// baseline is on and every reward is identical.
pub fn reinforce_dlogits(
    logits: &[f64],
    episodes: &[Episode],
    baseline_on: bool,
    without_replacement: bool,
) -> Option<Vec<f64>> {
    let first = episodes.first()?;
    let baseline = if !baseline_on {
        0.0
    } else if episodes.iter().all(|e| e.reward.to_bits() == first.reward.to_bits()) {
        return None;
    } else {
        episodes.iter().map(|e| e.reward).sum::<f64>() / episodes.len() as f64
    };
    let m = episodes.len() as f64;
    let mut total = vec![0.0; logits.len()];
    let mut any = false;
    for e in episodes {
        let adv = e.reward - baseline;
        if adv == 0.0 {
            continue;
        }
        any = true;
        for (t, g) in total.iter_mut().zip(log_prob_dlogits(logits, &e.chosen, without_replacement)) {
            *t += adv * g / m;
        }
    }
    any.then_some(total)
}

#[derive(Debug, Clone)]
pub struct Policy {
    pub shape: PolicyShape,
    pub params: TensorSet,
}

impl Policy {
    /// Weights uniform in [-0.1, 0.1], biases zero.
    pub fn new<R: Rng>(shape: PolicyShape, rng: &mut R) -> Result<Self> {
        if shape.conv_layers == 0 {
            return Err(Error::Invalid("the query encoder needs at least one convolution layer".into()));
        }
        if shape.input_dim == 0 || shape.maps == 0 || shape.mlp_units == 0 || shape.hidden == 0 {
            return Err(Error::Invalid("policy dimensions must be positive".into()));
        }
        let mut uniform = |name: String, rows: usize, cols: usize| {
            let mut t = Tensor::zeros(name, rows, cols);
            for v in &mut t.data {
                *v = rng.random_range(-0.1..=0.1);
            }
            t
        };
        let mut tensors = Vec::new();
        for l in 0..shape.conv_layers {
            let d_in = if l == 0 { shape.input_dim } else { shape.query_dim() };
            for w in WINDOWS {
                tensors.push(uniform(format!("conv{l}_k{w}"), shape.maps, w * d_in));
                tensors.push(Tensor::zeros(format!("conv{l}_b{w}"), 1, shape.maps));
            }
        }
        tensors.push(uniform("mlp_A".into(), shape.mlp_units, shape.input_dim));
        tensors.push(Tensor::zeros("mlp_a", 1, shape.mlp_units));
        tensors.push(uniform("head_W".into(), shape.hidden, shape.state_dim()));
        tensors.push(uniform("head_U".into(), 1, shape.hidden));
        tensors.push(Tensor::zeros("head_b", 1, 1));
        Ok(Policy {
            shape,
            params: TensorSet::new(tensors),
        })
    }

    /// Rebuilds a policy around loaded parameters, checking every shape.
    pub fn from_params(shape: PolicyShape, params: TensorSet) -> Result<Self> {
        let mut p = Policy::new(shape, &mut crate::rng::stream(0, "shape", 0, ""))?;
        p.params.assign(params)?;
        Ok(p)
    }

    fn conv_k(&self, l: usize, wi: usize) -> usize {
        2 * (l * WINDOWS.len() + wi)
    }

    fn conv_b(&self, l: usize, wi: usize) -> usize {
        self.conv_k(l, wi) + 1
    }

    fn mlp_a_w(&self) -> usize {
        2 * self.shape.conv_layers * WINDOWS.len()
    }

    fn head_w(&self) -> usize {
        self.mlp_a_w() + 2
    }

    fn t(&self, i: usize) -> &Tensor {
        &self.params.tensors[i]
    }

    fn conv_forward(&self, l: usize, input: Vec<Vec<f64>>) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let n = input.len();
        let d = input[0].len();
        let maps = self.shape.maps;
        let mut act = vec![vec![0.0; WINDOWS.len() * maps]; n];
        for (wi, &w) in WINDOWS.iter().enumerate() {
            let k = self.t(self.conv_k(l, wi));
            let b = &self.t(self.conv_b(l, wi)).data;
            for (p, out) in act.iter_mut().enumerate() {
                for m in 0..maps {
                    let row = k.row(m);
                    let mut z = b[m];
                    for o in 0..w.min(n - p) {
                        z += dot(&row[o * d..(o + 1) * d], &input[p + o]);
                    }
                    out[wi * maps + m] = z.max(0.0);
                }
            }
        }
        (input, act)
    }

    /// Runs the encoder and scores every candidate vector.
    pub fn forward(&self, sequence: Vec<Vec<f64>>, candidates: &[&[f64]]) -> Result<PolicyForward> {
        if sequence.is_empty() {
            return Err(Error::Invalid("empty query sequence".into()));
        }
        let lens = sequence.iter().map(Vec::len).chain(candidates.iter().map(|c| c.len()));
        if let Some(bad) = lens.into_iter().find(|&n| n != self.shape.input_dim) {
            return Err(Error::Dimension(format!(
                "policy expects {}-dimensional inputs, got {bad}",
                self.shape.input_dim
            )));
        }

        let channels = self.shape.query_dim();
        let last = self.shape.conv_layers - 1;
        let mut layers = Vec::with_capacity(self.shape.conv_layers);
        let mut x = sequence;
        let mut query_repr = Vec::new();
        for l in 0..self.shape.conv_layers {
            let (input, act) = self.conv_forward(l, x);
            let n = act.len();
            let (pooled, arg) = if l == last {
                let mut arg = vec![0usize; channels];
                let mut best = act[0].clone();
                for (p, row) in act.iter().enumerate().skip(1) {
                    for c in 0..channels {
                        if row[c] > best[c] {
                            best[c] = row[c];
                            arg[c] = p;
                        }
                    }
                }
                (vec![best], vec![arg])
            } else if n == 1 {
                (act.clone(), vec![vec![0; channels]])
            } else {
                let mut pooled = Vec::with_capacity(n - 1);
                let mut arg = Vec::with_capacity(n - 1);
                for p in 0..n - 1 {
                    let (mut row, mut src) = (vec![0.0; channels], vec![0usize; channels]);
                    for c in 0..channels {
                        let (a, b) = (act[p][c], act[p + 1][c]);
                        (row[c], src[c]) = if b > a { (b, p + 1) } else { (a, p) };
                    }
                    pooled.push(row);
                    arg.push(src);
                }
                (pooled, arg)
            };
            layers.push(ConvCache { input, act, arg });
            if l == last {
                query_repr = pooled.into_iter().next().expect("global pool has one row");
                x = Vec::new();
            } else {
                x = pooled;
            }
        }

        let a_w = self.t(self.mlp_a_w());
        let a_b = &self.t(self.mlp_a_w() + 1).data;
        let w = self.t(self.head_w());
        let u = &self.t(self.head_w() + 1).data;
        let bias = self.t(self.head_w() + 2).data[0];
        let mut cands = Vec::with_capacity(candidates.len());
        let mut logits = Vec::with_capacity(candidates.len());
        for c in candidates {
            let c_prime: Vec<f64> = (0..self.shape.mlp_units)
                .map(|i| (dot(a_w.row(i), c) + a_b[i]).tanh())
                .collect();
            let q_len = query_repr.len();
            let hidden: Vec<f64> = (0..self.shape.hidden)
                .map(|h| {
                    let row = w.row(h);
                    (dot(&row[..q_len], &query_repr) + dot(&row[q_len..], &c_prime)).tanh()
                })
                .collect();
            logits.push(dot(u, &hidden) + bias);
            cands.push(CandCache {
                c: c.to_vec(),
                c_prime,
                hidden,
            });
        }
        Ok(PolicyForward {
            layers,
            query_repr,
            cands,
            logits,
        })
    }

    /// Forward pass for a query and its candidate set.
    pub fn forward_query(&self, query: &Query, candidates: &CandidateTermSet, lex: &Lexicon) -> Result<PolicyForward> {
        let terms = candidates.all();
        let vecs: Vec<&[f64]> = terms.iter().map(|t| lex.term_vector(t)).collect();
        self.forward(lex.query_sequence(query), &vecs)
    }

    /// The pooled query representation.
    pub fn encode_query(&self, query: &Query, lex: &Lexicon) -> Result<Vec<f64>> {
        Ok(self.forward(lex.query_sequence(query), &[])?.query_repr)
    }

    pub fn sample_reformulation<R: Rng>(
        &self,
        query: &Query,
        candidates: &CandidateTermSet,
        fw: &PolicyForward,
        k: usize,
        without_replacement: bool,
        rng: &mut R,
    ) -> ReformulationAction {
        if candidates.is_empty() {
            return ReformulationAction::identity(query);
        }
        let (chosen, lp) = sample_indices(&fw.logits, k, without_replacement, rng);
        ReformulationAction::from_indices(query, &candidates.all(), chosen, lp)
    }

    /// Deterministic reformulation: the `k` highest-scoring candidates.
    pub fn greedy_reformulation(&self, query: &Query, candidates: &CandidateTermSet, fw: &PolicyForward, k: usize) -> ReformulationAction {
        if candidates.is_empty() {
            return ReformulationAction::identity(query);
        }
        let chosen = greedy_indices(&fw.logits, k);
        let lp = log_prob(&fw.logits, &chosen, true);
        ReformulationAction::from_indices(query, &candidates.all(), chosen, lp)
    }

    /// Accumulates `sum_j dlogits[j] * d logit_j / d params` into `grads`.
    pub fn backward(&self, fw: &PolicyForward, dlogits: &[f64], grads: &mut TensorSet) {
        let q_len = fw.query_repr.len();
        let hw = self.head_w();
        let mlp = self.mlp_a_w();
        let w = self.t(hw);
        let u = &self.t(hw + 1).data;
        let mut dq = vec![0.0; q_len];

        for (cand, &dl) in fw.cands.iter().zip(dlogits) {
            if dl == 0.0 {
                continue;
            }
            grads.tensors[hw + 2].data[0] += dl;
            let du: Vec<f64> = cand
                .hidden
                .iter()
                .zip(u)
                .map(|(h, uh)| dl * uh * (1.0 - h * h))
                .collect();
            for (g, h) in grads.tensors[hw + 1].data.iter_mut().zip(&cand.hidden) {
                *g += dl * h;
            }
            let mut dc_prime = vec![0.0; cand.c_prime.len()];
            {
                let gw = &mut grads.tensors[hw];
                for (h, &duh) in du.iter().enumerate() {
                    if duh == 0.0 {
                        continue;
                    }
                    let grow = gw.row_mut(h);
                    for (i, q) in fw.query_repr.iter().enumerate() {
                        grow[i] += duh * q;
                    }
                    for (i, c) in cand.c_prime.iter().enumerate() {
                        grow[q_len + i] += duh * c;
                    }
                    let row = w.row(h);
                    for (i, d) in dq.iter_mut().enumerate() {
                        *d += duh * row[i];
                    }
                    for (i, d) in dc_prime.iter_mut().enumerate() {
                        *d += duh * row[q_len + i];
                    }
                }
            }
            for (i, (dc, cp)) in dc_prime.iter().zip(&cand.c_prime).enumerate() {
                let dpre = dc * (1.0 - cp * cp);
                if dpre == 0.0 {
                    continue;
                }
                grads.tensors[mlp + 1].data[i] += dpre;
                let grow = grads.tensors[mlp].row_mut(i);
                for (g, x) in grow.iter_mut().zip(&cand.c) {
                    *g += dpre * x;
                }
            }
        }

        // Back through the encoder, last layer first.
        let channels = self.shape.query_dim();
        let maps = self.shape.maps;
        let mut dpooled = vec![dq];
        for l in (0..self.shape.conv_layers).rev() {
            let cache = &fw.layers[l];
            let n = cache.act.len();
            let mut dact = vec![vec![0.0; channels]; n];
            for (drow, arow) in dpooled.iter().zip(&cache.arg) {
                for c in 0..channels {
                    dact[arow[c]][c] += drow[c];
                }
            }
            let d = cache.input[0].len();
            let mut dinput = vec![vec![0.0; d]; n];
            for (wi, &win) in WINDOWS.iter().enumerate() {
                let (ki, bi) = (self.conv_k(l, wi), self.conv_b(l, wi));
                let k = self.t(ki);
                for p in 0..n {
                    for m in 0..maps {
                        let ch = wi * maps + m;
                        if cache.act[p][ch] <= 0.0 || dact[p][ch] == 0.0 {
                            continue;
                        }
                        let dz = dact[p][ch];
                        grads.tensors[bi].data[m] += dz;
                        let span = win.min(n - p);
                        {
                            let grow = grads.tensors[ki].row_mut(m);
                            for o in 0..span {
                                for (g, x) in grow[o * d..(o + 1) * d].iter_mut().zip(&cache.input[p + o]) {
                                    *g += dz * x;
                                }
                            }
                        }
                        if l > 0 {
                            let row = k.row(m);
                            for o in 0..span {
                                for (di, kv) in dinput[p + o].iter_mut().zip(&row[o * d..(o + 1) * d]) {
                                    *di += dz * kv;
                                }
                            }
                        }
                    }
                }
            }
            dpooled = dinput;
        }
    }

    /// Gradient of `log pi(chosen)` with respect to every parameter.
    pub fn grad_log_prob(&self, fw: &PolicyForward, chosen: &[usize], without_replacement: bool) -> TensorSet {
        let mut g = self.params.zeros_like();
        self.backward(fw, &log_prob_dlogits(&fw.logits, chosen, without_replacement), &mut g);
        g
    }
}

/// A [`Policy`] with its Adagrad accumulator.
#[derive(Debug, Clone)]
pub struct PolicyLearner {
    pub policy: Policy,
    pub adagrad: Adagrad,
}

impl PolicyLearner {
    pub fn new(policy: Policy, lr: f64) -> Self {
        let adagrad = Adagrad::new(&policy.params, lr);
        PolicyLearner { policy, adagrad }
    }

    /// Ascends the summed per-query reward gradient `ascent`, averaged over
    /// `batch_len` queries.
    pub fn reinforce_update(&mut self, ascent: &TensorSet, batch_len: usize) -> Result<()> {
        ascent.check_finite()?;
        let mut g = ascent.clone();
        g.scale(-1.0 / batch_len.max(1) as f64);
        self.adagrad.step(&mut self.policy.params, &g);
        Ok(())
    }
}
