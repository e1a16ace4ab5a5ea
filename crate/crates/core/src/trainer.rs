//! Cooperative training: pretrain the ranker on original queries, then
//! alternate reformulator epochs (ranker frozen) with periodic ranker
//! fine-tuning on reformulated queries (reformulator frozen).

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::config::TrainingConfig;
use crate::corpus::{load_corpus, load_qrels, load_queries, Document, JudgmentSet, Query, RankedList};
use crate::error::{Error, Result};
use crate::knowledge::{build_candidates, link_entities, CandidateTermSet, EntityDictionary, KnowledgeGraph};
use crate::knrm::{build_pairs, EncodedCorpus, KernelBank, KnrmLearner, KnrmModel, Ranker};
use crate::lexical::{load_embeddings, EmbeddingKind, TokenId, Vocabulary};
use crate::metrics::{reward, MetricReport};
use crate::policy::{reinforce_dlogits, Episode, Lexicon, Policy, PolicyLearner, PolicyShape, ReformulationAction};
use crate::retrieval::{Bm25Params, InvertedIndex};
use crate::rng::stream;
use crate::tensor::TensorSet;

pub const HISTORY_FILE: &str = "history.tsv";
pub const POLICY_FILE: &str = "policy.ckpt";
pub const RANKER_FILE: &str = "ranker.ckpt";
pub const PRETRAINED_FILE: &str = "ranker_pretrained.ckpt";
pub const CONFIG_FILE: &str = "config.txt";

/// A query with everything the pipeline derives from it up front.
#[derive(Debug, Clone)]
pub struct PreparedQuery {
    pub query: Query,
    pub ids: Vec<TokenId>,
    /// BM25 top `pool_size` for the original query.
    pub pool: RankedList,
    pub candidates: CandidateTermSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.tsv",
            Split::Valid => "valid.tsv",
            Split::Test => "test.tsv",
        }
    }
}

/// A loaded data directory.
pub struct Dataset {
    pub docs: Vec<Document>,
    doc_pos: HashMap<String, usize>,
    pub index: InvertedIndex,
    pub encoded: EncodedCorpus,
    pub lexicon: Lexicon,
    pub kg: KnowledgeGraph,
    pub dictionary: EntityDictionary,
    pub qrels: JudgmentSet,
    pub train: Vec<PreparedQuery>,
    pub valid: Vec<PreparedQuery>,
    pub test: Vec<PreparedQuery>,
}

impl Dataset {
    /// Reads `corpus.jsonl`, the three query splits (`test.tsv` may be
    /// absent), `qrels.txt`, the knowledge files and both embedding files.
    pub fn load(dir: &Path, cfg: &TrainingConfig) -> Result<Self> {
        let docs = load_corpus(&dir.join("corpus.jsonl"))?;
        let read_split = |s: Split| -> Result<Vec<Query>> {
            let path = dir.join(s.file_name());
            if s == Split::Test && !path.exists() {
                return Ok(Vec::new());
            }
            Ok(load_queries(&path)?.queries)
        };
        let (train, valid, test) = (read_split(Split::Train)?, read_split(Split::Valid)?, read_split(Split::Test)?);
        let qrels = load_qrels(&dir.join("qrels.txt"))?;
        let kg = KnowledgeGraph::load(&dir.join("entity_names.tsv"), &dir.join("kg_edges.tsv"))?;
        let dictionary = EntityDictionary::load(&dir.join("entity_dict.tsv"))?;

        let mut vocab = Vocabulary::new();
        for t in docs.iter().flat_map(|d| &d.tokens) {
            vocab.insert(t);
        }
        for t in train.iter().chain(&valid).chain(&test).flat_map(|q| &q.tokens) {
            vocab.insert(t);
        }
        for e in kg.entity_ids() {
            for t in kg.surface(e).unwrap_or_default() {
                vocab.insert(t);
            }
        }
        let entity_vocab = Vocabulary::from_tokens(kg.entity_ids());
        let word_emb = load_embeddings(
            &dir.join("word_emb.txt"),
            &vocab,
            EmbeddingKind::Word,
            &mut stream(cfg.seed, "oov-words", 0, ""),
        )?;
        let entity_emb = load_embeddings(
            &dir.join("entity_emb.txt"),
            &entity_vocab,
            EmbeddingKind::Entity,
            &mut stream(cfg.seed, "oov-entities", 0, ""),
        )?;
        let lexicon = Lexicon::new(vocab, word_emb, entity_vocab, entity_emb)?;

        let index = InvertedIndex::build(&docs);
        let encoded = EncodedCorpus::new(&docs, &lexicon.vocab);
        let doc_pos = docs.iter().enumerate().map(|(i, d)| (d.doc_id.clone(), i)).collect();
        let mut ds = Dataset {
            docs,
            doc_pos,
            index,
            encoded,
            lexicon,
            kg,
            dictionary,
            qrels,
            train: Vec::new(),
            valid: Vec::new(),
            test: Vec::new(),
        };
        ds.train = ds.prepare(train, cfg);
        ds.valid = ds.prepare(valid, cfg);
        ds.test = ds.prepare(test, cfg);
        Ok(ds)
    }

    fn prepare(&self, queries: Vec<Query>, cfg: &TrainingConfig) -> Vec<PreparedQuery> {
        queries
            .into_iter()
            .map(|q| {
                let query = link_entities(&q, &self.dictionary);
                let pool = self
                    .index
                    .retrieve_topk(&query.query_id, &query.tokens, cfg.pool_size, Bm25Params::default());
                let prf = self.prf_docs(&query, cfg.prf_docs);
                let candidates = build_candidates(
                    &query,
                    &prf,
                    &self.kg,
                    &self.lexicon.vocab,
                    &self.lexicon.word_emb,
                    cfg.know_top,
                );
                PreparedQuery {
                    ids: self.lexicon.vocab.encode(&query.tokens),
                    query,
                    pool,
                    candidates,
                }
            })
            .collect()
    }

    /// BM25 top `k` documents for the original query.
    pub fn prf_docs(&self, query: &Query, k: usize) -> Vec<&Document> {
        self.index
            .retrieve_topk(&query.query_id, &query.tokens, k, Bm25Params::default())
            .doc_ids()
            .filter_map(|d| self.doc_pos.get(d).map(|&i| &self.docs[i]))
            .collect()
    }

    pub fn split(&self, s: Split) -> &[PreparedQuery] {
        match s {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn policy_shape(&self, cfg: &TrainingConfig) -> PolicyShape {
        PolicyShape::new(self.lexicon.dim(), cfg.conv_layers)
    }

    pub fn new_ranker(&self, cfg: &TrainingConfig) -> Result<KnrmModel> {
        Ok(KnrmModel::new(
            KernelBank::with_kernels(cfg.kernels)?,
            &self.lexicon.word_emb,
            cfg.train_embeddings,
            &mut stream(cfg.seed, "knrm-init", 0, ""),
        ))
    }

    pub fn new_policy(&self, cfg: &TrainingConfig) -> Result<Policy> {
        Policy::new(self.policy_shape(cfg), &mut stream(cfg.seed, "policy-init", 0, ""))
    }
}

fn thread_pool(cfg: &TrainingConfig) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} worker threads: {e}", cfg.threads)))
}

fn rerank_tokens(ranker: &KnrmModel, ds: &Dataset, pq: &PreparedQuery, tokens: &[String]) -> RankedList {
    ranker.rerank(&ds.lexicon.vocab.encode(tokens), &pq.pool, &ds.encoded)
}

/// Ranker alone: rerank each pool with the original query.
pub fn rank_original(ranker: &KnrmModel, ds: &Dataset, queries: &[PreparedQuery]) -> Vec<RankedList> {
    queries
        .iter()
        .map(|pq| ranker.rerank(&pq.ids, &pq.pool, &ds.encoded))
        .collect()
}

/// Greedy reformulation used at evaluation and inference time.
pub fn greedy_reformulate(policy: &Policy, ds: &Dataset, pq: &PreparedQuery, k: usize) -> Result<ReformulationAction> {
    if pq.candidates.is_empty() {
        return Ok(ReformulationAction::identity(&pq.query));
    }
    let fw = policy.forward_query(&pq.query, &pq.candidates, &ds.lexicon)?;
    Ok(policy.greedy_reformulation(&pq.query, &pq.candidates, &fw, k))
}

/// Full pipeline: greedy reformulation, then rerank of the original pool.
pub fn rank_pipeline(
    policy: &Policy,
    ranker: &KnrmModel,
    ds: &Dataset,
    queries: &[PreparedQuery],
    k: usize,
) -> Result<Vec<RankedList>> {
    queries
        .iter()
        .map(|pq| {
            let action = greedy_reformulate(policy, ds, pq, k)?;
            Ok(rerank_tokens(ranker, ds, pq, &action.reformulated_query))
        })
        .collect()
}

/// Per-epoch pretraining record.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainRecord {
    pub epoch: usize,
    pub loss: f64,
    pub valid_ndcg10: f64,
}

/// Trains a ranker on original queries with early stopping on validation
/// nDCG@10; returns the best model and the per-epoch log.
pub fn pretrain_ranker(ds: &Dataset, cfg: &TrainingConfig) -> Result<(KnrmModel, Vec<PretrainRecord>)> {
    let init = ds.new_ranker(cfg)?;
    let mut pairs = Vec::new();
    for (qi, pq) in ds.train.iter().enumerate() {
        for p in build_pairs(&pq.pool, &ds.qrels) {
            pairs.push((qi, p));
        }
    }
    if pairs.is_empty() {
        return Err(Error::Invalid("no training pairs with distinct grades in any pool".into()));
    }
    if cfg.pretrain_epochs == 0 {
        return Ok((init, Vec::new()));
    }

    let mut learner = KnrmLearner::new(init, cfg.lr_pretrain);
    let mut best = (f64::NEG_INFINITY, learner.model.clone(), 0usize);
    let mut log = Vec::new();
    for epoch in 1..=cfg.pretrain_epochs {
        pairs.shuffle(&mut stream(cfg.seed, "pretrain-order", epoch as u64, ""));
        let mut loss = 0.0;
        let mut batches = 0usize;
        for chunk in pairs.chunks(cfg.ranker_batch) {
            let batch: Vec<(&[TokenId], &[TokenId], &[TokenId])> = chunk
                .iter()
                .filter_map(|(qi, p)| {
                    Some((
                        ds.train[*qi].ids.as_slice(),
                        ds.encoded.get(&p.plus)?,
                        ds.encoded.get(&p.minus)?,
                    ))
                })
                .collect();
            loss += learner.train_batch(&batch)?;
            batches += 1;
        }
        let valid = MetricReport::evaluate(&rank_original(&learner.model, ds, &ds.valid), &ds.qrels);
        let ndcg = valid.mean.ndcg10;
        log::info!("pretrain epoch {epoch}: loss {:.4}, valid nDCG@10 {ndcg:.4}", loss / batches as f64);
        log.push(PretrainRecord {
            epoch,
            loss: loss / batches as f64,
            valid_ndcg10: ndcg,
        });
        if ndcg > best.0 {
            best = (ndcg, learner.model.clone(), epoch);
        } else if epoch - best.2 >= cfg.patience {
            break;
        }
    }
    Ok((best.1, log))
}

struct QueryOutcome {
    rewards: Vec<f64>,
    grad: Option<TensorSet>,
}

fn query_episodes(
    policy: &Policy,
    ranker: &KnrmModel,
    ds: &Dataset,
    pq: &PreparedQuery,
    cfg: &TrainingConfig,
    epoch: usize,
) -> Result<QueryOutcome> {
    let fw = policy.forward_query(&pq.query, &pq.candidates, &ds.lexicon)?;
    let mut rng = stream(cfg.seed, "reform", epoch as u64, &pq.query.query_id);
    let mut episodes = Vec::with_capacity(cfg.M);
    for _ in 0..cfg.M {
        let action = policy.sample_reformulation(&pq.query, &pq.candidates, &fw, cfg.K, cfg.without_replacement, &mut rng);
        let list = rerank_tokens(ranker, ds, pq, &action.reformulated_query);
        episodes.push(Episode {
            chosen: action.chosen,
            reward: reward(&list, &ds.qrels),
        });
    }
    let grad = reinforce_dlogits(&fw.logits, &episodes, cfg.baseline_on, cfg.without_replacement).map(|dl| {
        let mut g = policy.params.zeros_like();
        policy.backward(&fw, &dl, &mut g);
        g
    });
    Ok(QueryOutcome {
        rewards: episodes.into_iter().map(|e| e.reward).collect(),
        grad,
    })
}

/// One REINFORCE pass over the training queries with the ranker frozen.
/// Returns the mean episode reward. Queries without candidates are skipped.
pub fn reformulator_epoch(
    learner: &mut PolicyLearner,
    ranker: &KnrmModel,
    ds: &Dataset,
    cfg: &TrainingConfig,
    epoch: usize,
) -> Result<f64> {
    let pool = thread_pool(cfg)?;
    let mut order: Vec<&PreparedQuery> = ds.train.iter().filter(|pq| !pq.candidates.is_empty()).collect();
    order.shuffle(&mut stream(cfg.seed, "reform-order", epoch as u64, ""));
    let mut total = 0.0;
    let mut count = 0usize;
    for batch in order.chunks(cfg.batch_size) {
        let policy = &learner.policy;
        let outcomes: Vec<Result<QueryOutcome>> = pool.install(|| {
            batch
                .par_iter()
                .map(|pq| query_episodes(policy, ranker, ds, pq, cfg, epoch))
                .collect()
        });
        let mut ascent = learner.policy.params.zeros_like();
        let mut any = false;
        for o in outcomes {
            let o = o?;
            total += o.rewards.iter().sum::<f64>();
            count += o.rewards.len();
            if let Some(g) = o.grad {
                ascent.add_scaled(&g, 1.0);
                any = true;
            }
        }
        if any {
            learner.reinforce_update(&ascent, batch.len())?;
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// One fine-tuning pass: each training query is reformulated once by
/// sampling and the ranker learns from pairs of its original pool.
/// Returns the mean hinge loss.
pub fn finetune_ranker_epoch(
    policy: &Policy,
    learner: &mut KnrmLearner,
    ds: &Dataset,
    cfg: &TrainingConfig,
    epoch: usize,
) -> Result<f64> {
    let mut reformulated: Vec<Vec<TokenId>> = Vec::with_capacity(ds.train.len());
    for pq in &ds.train {
        let tokens = if pq.candidates.is_empty() {
            pq.query.tokens.clone()
        } else {
            let fw = policy.forward_query(&pq.query, &pq.candidates, &ds.lexicon)?;
            let mut rng = stream(cfg.seed, "finetune", epoch as u64, &pq.query.query_id);
            policy
                .sample_reformulation(&pq.query, &pq.candidates, &fw, cfg.K, cfg.without_replacement, &mut rng)
                .reformulated_query
        };
        reformulated.push(ds.lexicon.vocab.encode(&tokens));
    }
    let mut pairs: Vec<(usize, crate::knrm::TrainingPair)> = ds
        .train
        .iter()
        .enumerate()
        .flat_map(|(qi, pq)| build_pairs(&pq.pool, &ds.qrels).into_iter().map(move |p| (qi, p)))
        .collect();
    pairs.shuffle(&mut stream(cfg.seed, "finetune-order", epoch as u64, ""));
    let mut loss = 0.0;
    let mut batches = 0usize;
    for chunk in pairs.chunks(cfg.ranker_batch) {
        let batch: Vec<(&[TokenId], &[TokenId], &[TokenId])> = chunk
            .iter()
            .filter_map(|(qi, p)| {
                Some((
                    reformulated[*qi].as_slice(),
                    ds.encoded.get(&p.plus)?,
                    ds.encoded.get(&p.minus)?,
                ))
            })
            .collect();
        loss += learner.train_batch(&batch)?;
        batches += 1;
    }
    Ok(if batches == 0 { 0.0 } else { loss / batches as f64 })
}

/// One row of the training history.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_reward: f64,
    pub ranker_updated: bool,
    pub valid: crate::metrics::MetricValues,
}

pub fn history_tsv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch\tmean_reward\tranker_updated\tvalid_map\tvalid_err\tvalid_ndcg5\tvalid_ndcg10\n");
    for r in history {
        let _ = writeln!(
            out,
            "{}\t{:.6}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            r.epoch,
            r.mean_reward,
            u8::from(r.ranker_updated),
            r.valid.map,
            r.valid.err,
            r.valid.ndcg5,
            r.valid.ndcg10
        );
    }
    out
}

/// Best checkpoints and the full history of a cooperative run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: Policy,
    pub ranker: KnrmModel,
    pub best_epoch: usize,
    pub best_valid_ndcg10: f64,
    pub history: Vec<EpochRecord>,
}

/// Alternates reformulator epochs and ranker fine-tuning (every
/// `train_ranker_fre` epochs unless `freeze_ranker`), stopping after
/// `patience` epochs without a validation nDCG@10 improvement.
pub fn cooperative_loop(ds: &Dataset, cfg: &TrainingConfig, pretrained: KnrmModel) -> Result<TrainOutcome> {
    let mut policy = PolicyLearner::new(ds.new_policy(cfg)?, cfg.lr_reformulator);
    let mut ranker = KnrmLearner::new(pretrained, cfg.lr_finetune);
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Policy, KnrmModel)> = None;

    for epoch in 1..=cfg.max_epochs {
        let mean_reward = reformulator_epoch(&mut policy, &ranker.model, ds, cfg, epoch)?;
        let ranker_updated = !cfg.freeze_ranker && epoch % cfg.train_ranker_fre == 0;
        if ranker_updated {
            finetune_ranker_epoch(&policy.policy, &mut ranker, ds, cfg, epoch)?;
        }
        let lists = rank_pipeline(&policy.policy, &ranker.model, ds, &ds.valid, cfg.K)?;
        let valid = MetricReport::evaluate(&lists, &ds.qrels).mean;
        log::info!(
            "epoch {epoch}: reward {mean_reward:.4}, valid nDCG@10 {:.4}{}",
            valid.ndcg10,
            if ranker_updated { " (ranker fine-tuned)" } else { "" }
        );
        history.push(EpochRecord {
            epoch,
            mean_reward,
            ranker_updated,
            valid,
        });
        match &best {
            Some((score, best_epoch, ..)) if valid.ndcg10 <= *score => {
                if epoch - best_epoch >= cfg.patience {
                    log::info!("no improvement for {} epochs; stopping", cfg.patience);
                    break;
                }
            }
            _ => best = Some((valid.ndcg10, epoch, policy.policy.clone(), ranker.model.clone())),
        }
    }
    let (best_valid_ndcg10, best_epoch, policy, ranker) = match best {
        Some(b) => b,
        None => (f64::NAN, 0, policy.policy, ranker.model),
    };
    Ok(TrainOutcome {
        policy,
        ranker,
        best_epoch,
        best_valid_ndcg10,
        history,
    })
}

/// Directory layout of one `train` invocation.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub dir: PathBuf,
}

impl RunPaths {
    pub fn new(root: &Path, cfg: &TrainingConfig) -> Self {
        RunPaths {
            dir: root.join(cfg.run_dir_name()),
        }
    }

    pub fn history(&self) -> PathBuf {
        self.dir.join(HISTORY_FILE)
    }

    pub fn policy(&self) -> PathBuf {
        self.dir.join(POLICY_FILE)
    }

    pub fn ranker(&self) -> PathBuf {
        self.dir.join(RANKER_FILE)
    }

    pub fn pretrained(&self) -> PathBuf {
        self.dir.join(PRETRAINED_FILE)
    }

    pub fn config(&self) -> PathBuf {
        self.dir.join(CONFIG_FILE)
    }
}

/// Pretrains (unless `pretrained` is given), runs the cooperative loop and
/// writes config, checkpoints and history under the run directory.
pub fn train_and_save(
    ds: &Dataset,
    cfg: &TrainingConfig,
    root: &Path,
    pretrained: Option<KnrmModel>,
) -> Result<(RunPaths, TrainOutcome)> {
    let paths = RunPaths::new(root, cfg);
    std::fs::create_dir_all(&paths.dir).map_err(|e| Error::io(&paths.dir, e))?;
    std::fs::write(paths.config(), cfg.render()).map_err(|e| Error::io(paths.config(), e))?;
    let pretrained = match pretrained {
        Some(m) => m,
        None => pretrain_ranker(ds, cfg)?.0,
    };
    pretrained.params.save(&paths.pretrained())?;
    let outcome = cooperative_loop(ds, cfg, pretrained)?;
    outcome.policy.params.save(&paths.policy())?;
    outcome.ranker.params.save(&paths.ranker())?;
    std::fs::write(paths.history(), history_tsv(&outcome.history)).map_err(|e| Error::io(paths.history(), e))?;
    Ok((paths, outcome))
}

/// Loads a ranker checkpoint written by [`train_and_save`] or `pretrain`.
pub fn load_ranker(ds: &Dataset, cfg: &TrainingConfig, path: &Path) -> Result<KnrmModel> {
    let mut model = ds.new_ranker(cfg)?;
    model.params.assign(TensorSet::load(path)?)?;
    Ok(model)
}

pub fn load_policy(ds: &Dataset, cfg: &TrainingConfig, path: &Path) -> Result<Policy> {
    Policy::from_params(ds.policy_shape(cfg), TensorSet::load(path)?)
}
