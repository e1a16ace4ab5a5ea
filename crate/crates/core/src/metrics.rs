//! Ranking metrics over graded judgments: AP (the reformulator's reward),
//! ERR and nDCG@k.

use std::fmt::Write as _;

use crate::corpus::{JudgmentSet, RankedList};

/// AP with `relevant = grade >= rel_threshold`.
///
/// The denominator is the number of judged relevant documents for the
/// query, capped at the list length.
pub fn average_precision(list: &RankedList, judg: &JudgmentSet, rel_threshold: u32) -> f64 {
    let judged_relevant = judg
        .for_query(&list.query_id)
        .map_or(0, |m| m.values().filter(|&&g| g >= rel_threshold).count());
    let denom = judged_relevant.min(list.len());
    if denom == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, doc) in list.doc_ids().enumerate() {
        if judg.grade(&list.query_id, doc) >= rel_threshold {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    (sum / denom as f64).min(1.0)
}

fn gain(grade: u32) -> f64 {
    2f64.powi(grade as i32) - 1.0
}

/// nDCG@k with exponential gain and `log2(rank + 1)` discount. The ideal
/// ordering is taken over every judged document of the query.
pub fn ndcg_at_k(list: &RankedList, judg: &JudgmentSet, k: usize) -> f64 {
    let dcg: f64 = list
        .doc_ids()
        .take(k)
        .enumerate()
        .map(|(i, d)| gain(judg.grade(&list.query_id, d)) / ((i + 2) as f64).log2())
        .sum();
    let mut ideal: Vec<u32> = judg
        .for_query(&list.query_id)
        .map(|m| m.values().copied().collect())
        .unwrap_or_default();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| gain(g) / ((i + 2) as f64).log2())
        .sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

/// Expected reciprocal rank with stop probability `(2^g - 1) / 2^g_max`.
pub fn err(list: &RankedList, judg: &JudgmentSet) -> f64 {
    let g_max = judg.max_grade();
    if g_max == 0 {
        log::warn!("ERR undefined with max grade 0; reporting 0");
        return 0.0;
    }
    let denom = 2f64.powi(g_max as i32);
    let mut not_stopped = 1.0;
    let mut total = 0.0;
    for (i, d) in list.doc_ids().enumerate() {
        let r = gain(judg.grade(&list.query_id, d)) / denom;
        total += not_stopped * r / (i + 1) as f64;
        not_stopped *= 1.0 - r;
    }
    total
}

/// The reformulator's reward: average precision at the binary threshold 1.
pub fn reward(list: &RankedList, judg: &JudgmentSet) -> f64 {
    average_precision(list, judg, 1)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MetricValues {
    pub map: f64,
    pub err: f64,
    pub ndcg5: f64,
    pub ndcg10: f64,
}

impl MetricValues {
    pub fn compute(list: &RankedList, judg: &JudgmentSet) -> Self {
        MetricValues {
            map: average_precision(list, judg, 1),
            err: err(list, judg),
            ndcg5: ndcg_at_k(list, judg, 5),
            ndcg10: ndcg_at_k(list, judg, 10),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub per_query: Vec<(String, MetricValues)>,
    pub mean: MetricValues,
    /// Queries in the run without any judgment; excluded from the means.
    pub excluded: usize,
}

impl MetricReport {
    /// Macro-averages over queries that have at least one judgment.
    pub fn evaluate(lists: &[RankedList], judg: &JudgmentSet) -> Self {
        let mut report = MetricReport::default();
        for list in lists {
            if !judg.has_judgments(&list.query_id) {
                report.excluded += 1;
                continue;
            }
            report
                .per_query
                .push((list.query_id.clone(), MetricValues::compute(list, judg)));
        }
        let n = report.per_query.len();
        if n > 0 {
            let mut m = MetricValues::default();
            for (_, v) in &report.per_query {
                m.map += v.map;
                m.err += v.err;
                m.ndcg5 += v.ndcg5;
                m.ndcg10 += v.ndcg10;
            }
            let n = n as f64;
            report.mean = MetricValues {
                map: m.map / n,
                err: m.err / n,
                ndcg5: m.ndcg5 / n,
                ndcg10: m.ndcg10 / n,
            };
        }
        report
    }

    /// Tab-separated per-query values with a header line.
    pub fn per_query_tsv(&self, system: &str) -> String {
        let mut out = String::from("system\tquery_id\tmap\terr\tndcg@5\tndcg@10\n");
        for (q, v) in &self.per_query {
            let _ = writeln!(
                out,
                "{system}\t{q}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
                v.map, v.err, v.ndcg5, v.ndcg10
            );
        }
        out
    }
}

/// Fixed-width metric x system table.
pub fn format_table(systems: &[(String, MetricReport)]) -> String {
    let mut out = format!("{:<10}", "metric");
    for (name, _) in systems {
        let _ = write!(out, " {name:>12}");
    }
    out.push('\n');
    let rows: [(&str, fn(&MetricValues) -> f64); 4] = [
        ("MAP", |v| v.map),
        ("ERR", |v| v.err),
        ("nDCG@5", |v| v.ndcg5),
        ("nDCG@10", |v| v.ndcg10),
    ];
    for (label, get) in rows {
        let _ = write!(out, "{label:<10}");
        for (_, r) in systems {
            let _ = write!(out, " {:>12.4}", get(&r.mean));
        }
        out.push('\n');
    }
    let _ = write!(out, "{:<10}", "queries");
    for (_, r) in systems {
        let _ = write!(out, " {:>12}", r.per_query.len());
    }
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn list(docs: &[&str]) -> RankedList {
        let n = docs.len();
        RankedList {
            query_id: "q".into(),
            entries: docs
                .iter()
                .enumerate()
                .map(|(i, d)| (d.to_string(), (n - i) as f64))
                .collect(),
        }
    }

    fn judg(grades: &[(&str, u32)]) -> JudgmentSet {
        let mut j = JudgmentSet::new();
        for (d, g) in grades {
            j.insert("q", d, *g);
        }
        j
    }

    #[test]
    fn ap_examples() {
        let j = judg(&[("d1", 1)]);
        assert_eq!(average_precision(&list(&["d1", "d2", "d3"]), &j, 1), 1.0);
        let j = judg(&[("d2", 1)]);
        assert_eq!(average_precision(&list(&["d1", "d2", "d3"]), &j, 1), 0.5);
        let j = judg(&[("d1", 0)]);
        assert_eq!(average_precision(&list(&["d1", "d2"]), &j, 1), 0.0);
    }

    #[test]
    fn ap_denominator_capped_at_list_length() {
        let j = judg(&[("a", 1), ("b", 1), ("c", 1)]);
        assert_eq!(average_precision(&list(&["a"]), &j, 1), 1.0);
        assert_eq!(average_precision(&list(&["x", "a"]), &j, 1), 0.25);
    }

    #[test]
    fn ndcg_examples() {
        let j = judg(&[("a", 3), ("b", 0), ("c", 1)]);
        assert!((ndcg_at_k(&list(&["a", "c", "b"]), &j, 10) - 1.0).abs() < 1e-15);
        // DCG@2 = 7, IDCG@2 = 7 + 1/log2(3)
        let expected = 7.0 / (7.0 + 1.0 / 3f64.log2());
        let got = ndcg_at_k(&list(&["a", "b", "c"]), &j, 2);
        assert!((got - expected).abs() < 1e-15);
        assert!((got - 0.9173).abs() < 1e-4);
        let zero = judg(&[("a", 0), ("b", 0)]);
        assert_eq!(ndcg_at_k(&list(&["a", "b"]), &zero, 5), 0.0);
    }

    #[test]
    fn err_examples() {
        let j = judg(&[("a", 1)]);
        assert_eq!(err(&list(&["a"]), &j), 0.5);
        let mut zero = judg(&[("a", 0)]);
        zero.insert("other", "z", 1);
        assert_eq!(err(&list(&["a", "b"]), &zero), 0.0);
        let j = judg(&[("a", 12)]);
        let e = err(&list(&["a"]), &j);
        assert!(e < 1.0 && e > 0.9997);
        assert_eq!(e, (2f64.powi(12) - 1.0) / 2f64.powi(12));
        assert_eq!(err(&list(&["a"]), &JudgmentSet::new()), 0.0);
    }

    #[test]
    fn reward_delegates_to_ap() {
        let j = judg(&[("a", 1)]);
        assert_eq!(reward(&list(&["a", "b", "c"]), &j), 1.0);
        assert!((reward(&list(&["b", "c", "a"]), &j) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn report_excludes_unjudged_queries() {
        let j = judg(&[("a", 1)]);
        let lists = vec![
            list(&["a"]),
            RankedList {
                query_id: "nojudg".into(),
                entries: vec![("a".into(), 1.0)],
            },
        ];
        let r = MetricReport::evaluate(&lists, &j);
        assert_eq!(r.excluded, 1);
        assert_eq!(r.per_query.len(), 1);
        assert_eq!(r.mean.map, 1.0);
        assert!(format_table(&[("sys".into(), r.clone())]).contains("nDCG@10"));
        assert!(r.per_query_tsv("sys").starts_with("system\tquery_id"));
    }

    #[test]
    fn swapping_better_doc_upward_never_hurts() {
        let j = judg(&[("a", 2), ("b", 1), ("c", 0), ("d", 1)]);
        let worse = list(&["c", "b", "a", "d"]);
        let better = list(&["c", "a", "b", "d"]);
        assert!(ndcg_at_k(&better, &j, 5) >= ndcg_at_k(&worse, &j, 5));
        assert!(err(&better, &j) >= err(&worse, &j));
    }
}
