use cnir_core::corpus::{Document, RankedList};
use cnir_core::knrm::{kernel_pool, EncodedCorpus, KernelBank, KnrmLearner, KnrmModel, Ranker, LOG_CLAMP};
use cnir_core::lexical::{EmbeddingKind, EmbeddingTable, Vocabulary, PAD};
use cnir_core::rng::stream;
use proptest::prelude::*;
use rand::Rng;

fn matrix() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..=10, 1usize..=10)
        .prop_flat_map(|(n, m)| prop::collection::vec(prop::collection::vec(-1.0f64..=1.0, m), n))
}

fn table(vocab: usize, dim: usize, seed: u64) -> EmbeddingTable {
    let mut rng = stream(seed, "test-emb", 0, "");
    let mut data = vec![0.0; dim];
    data.extend((dim..vocab * dim).map(|_| rng.random_range(-1.0..1.0)));
    EmbeddingTable::from_rows(EmbeddingKind::Word, dim, data).unwrap()
}

proptest! {
    #[test]
    fn pooling_matches_double_loop(m in matrix(), n_kernels in 2usize..12) {
        let bank = KernelBank::with_kernels(n_kernels).unwrap();
        let phi = kernel_pool(&m, &bank);
        for t in 0..bank.len() {
            let mut want = 0.0;
            for row in &m {
                let mut s = 0.0;
                for &x in row {
                    s += (-(x - bank.mu()[t]).powi(2) / (2.0 * bank.sigma()[t].powi(2))).exp();
                }
                want += s.max(LOG_CLAMP).ln();
            }
            prop_assert!((phi[t] - want).abs() <= 1e-12);
        }
    }

    #[test]
    fn rerank_is_a_permutation_of_the_pool(scores in prop::collection::vec(0.0f64..5.0, 1..12), seed in any::<u64>()) {
        let words: Vec<String> = (0..6).map(|i| format!("w{i}")).collect();
        let vocab = Vocabulary::from_tokens(words.iter().map(String::as_str));
        let mut rng = stream(seed, "test-docs", 0, "");
        let docs: Vec<Document> = (0..scores.len())
            .map(|i| {
                let len = rng.random_range(0..4);
                Document::new(format!("d{i}"), (0..len).map(|_| words[rng.random_range(0..6)].clone()).collect())
            })
            .collect();
        let enc = EncodedCorpus::new(&docs, &vocab);
        let pool = RankedList::from_scores("q", docs.iter().zip(&scores).map(|(d, &s)| (d.doc_id.clone(), s)).collect());
        let model = KnrmModel::new(KernelBank::default(), &table(vocab.len(), 5, seed), true, &mut rng);
        let out = model.rerank(&vocab.encode(&["w0", "w3"]), &pool, &enc);
        let mut a: Vec<&str> = pool.doc_ids().collect();
        let mut b: Vec<&str> = out.doc_ids().collect();
        a.sort_unstable();
        b.sort_unstable();
        prop_assert_eq!(a, b);
        prop_assert!(out.validate().is_ok());
        // empty documents sink to the bottom
        let first_empty = out.doc_ids().position(|d| enc.get(d).unwrap().is_empty());
        if let Some(p) = first_empty {
            prop_assert!(out.doc_ids().skip(p).all(|d| enc.get(d).unwrap().is_empty()));
        }
    }
}

#[test]
fn training_separates_a_planted_pair_and_keeps_padding_zero() {
    let emb = table(8, 6, 3);
    let model = KnrmModel::new(KernelBank::default(), &emb, true, &mut stream(3, "knrm-init", 0, ""));
    let mut learner = KnrmLearner::new(model, 0.05);
    let (q, plus, minus) = (vec![2, 3], vec![2, 3, 4], vec![5, 6, 7]);
    let before = learner.model.pairwise_loss(&q, &plus, &minus).unwrap();
    for _ in 0..50 {
        learner.train_batch(&[(&q, &plus, &minus)]).unwrap();
    }
    let after = learner.model.pairwise_loss(&q, &plus, &minus).unwrap();
    assert!(after < before, "{before} -> {after}");
    assert!(learner.model.embeddings().row(PAD).iter().all(|&x| x == 0.0));
}

#[test]
fn frozen_embeddings_stay_fixed() {
    let emb = table(8, 6, 4);
    let model = KnrmModel::new(KernelBank::default(), &emb, false, &mut stream(4, "knrm-init", 0, ""));
    let mut learner = KnrmLearner::new(model, 0.05);
    learner.train_batch(&[(&[2, 3][..], &[2, 4][..], &[6][..])]).unwrap();
    assert_eq!(learner.model.embeddings(), emb);
}
