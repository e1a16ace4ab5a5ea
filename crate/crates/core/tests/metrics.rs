use cnir_core::corpus::{JudgmentSet, RankedList};
use cnir_core::metrics::{average_precision, err, ndcg_at_k, MetricReport, MetricValues};
use proptest::prelude::*;

fn instance() -> impl Strategy<Value = (Vec<u32>, Vec<u32>)> {
    // (grades of ranked docs, coarse scores)
    (1usize..12).prop_flat_map(|n| (prop::collection::vec(0u32..4, n), prop::collection::vec(0u32..3, n)))
}

fn build(grades: &[u32], scores: &[u32]) -> (RankedList, JudgmentSet) {
    let mut judg = JudgmentSet::new();
    let mut entries = Vec::new();
    for (i, (&g, &s)) in grades.iter().zip(scores).enumerate() {
        let doc = format!("d{i:02}");
        judg.insert("q", &doc, g);
        entries.push((doc, f64::from(s)));
    }
    (RankedList::from_scores("q", entries), judg)
}

fn all(list: &RankedList, judg: &JudgmentSet) -> [f64; 4] {
    let v = MetricValues::compute(list, judg);
    [v.map, v.err, v.ndcg5, v.ndcg10]
}

proptest! {
    #[test]
    fn metrics_lie_in_unit_interval((grades, scores) in instance()) {
        let (list, judg) = build(&grades, &scores);
        for v in all(&list, &judg) {
            prop_assert!((0.0..=1.0).contains(&v), "{v}");
        }
    }

    #[test]
    fn permuting_equal_grade_ties_is_neutral((grades, scores) in instance(), seed in any::<u64>()) {
        let (list, judg) = build(&grades, &scores);
        let mut entries = list.entries.clone();
        // swap adjacent pairs sharing score and grade, chosen by the seed bits
        for i in 0..entries.len().saturating_sub(1) {
            let same_score = entries[i].1 == entries[i + 1].1;
            let same_grade = judg.grade("q", &entries[i].0) == judg.grade("q", &entries[i + 1].0);
            if same_score && same_grade && (seed >> (i % 64)) & 1 == 1 {
                entries.swap(i, i + 1);
            }
        }
        let permuted = RankedList { query_id: "q".into(), entries };
        prop_assert_eq!(all(&list, &judg), all(&permuted, &judg));
    }

    #[test]
    fn promoting_a_better_document_never_hurts((grades, scores) in instance(), i in 0usize..12, j in 0usize..12) {
        let (list, judg) = build(&grades, &scores);
        let n = list.len();
        let (a, b) = (i % n, j % n);
        let (hi, lo) = (a.min(b), a.max(b));
        let g = |k: usize| judg.grade("q", &list.entries[k].0);
        prop_assume!(g(lo) > g(hi));
        let mut entries = list.entries.clone();
        entries.swap(hi, lo);
        let swapped = RankedList { query_id: "q".into(), entries };
        for k in [5, 10] {
            prop_assert!(ndcg_at_k(&swapped, &judg, k) >= ndcg_at_k(&list, &judg, k) - 1e-12);
        }
        prop_assert!(err(&swapped, &judg) >= err(&list, &judg) - 1e-12);
    }
}

#[test]
fn unjudged_queries_are_excluded_from_means() {
    let mut judg = JudgmentSet::new();
    judg.insert("q1", "a", 1);
    let lists = vec![
        RankedList::from_scores("q1", vec![("a".into(), 1.0)]),
        RankedList::from_scores("q2", vec![("a".into(), 1.0)]),
    ];
    let report = MetricReport::evaluate(&lists, &judg);
    assert_eq!(report.excluded, 1);
    assert_eq!(report.per_query.len(), 1);
    assert_eq!(report.mean.map, 1.0);
}

#[test]
fn threshold_controls_relevance() {
    let mut judg = JudgmentSet::new();
    judg.insert("q", "a", 1);
    judg.insert("q", "b", 2);
    let list = RankedList::from_scores("q", vec![("a".into(), 2.0), ("b".into(), 1.0)]);
    assert_eq!(average_precision(&list, &judg, 1), 1.0);
    assert_eq!(average_precision(&list, &judg, 2), 0.5);
    assert_eq!(average_precision(&list, &judg, 3), 0.0);
}
