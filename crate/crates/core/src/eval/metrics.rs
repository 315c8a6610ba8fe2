use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::classical::{PairScorer, RankedList};
use crate::data::QueryGroup;
use crate::{DocId, Error, QueryId, Result};

/// Aggregate ranking metrics for single-positive query groups.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub mrr: f64,
    pub p_at_1: f64,
    pub p_at_5: f64,
    pub recall_at_5: f64,
    /// Reciprocal rank of the positive, per query.
    pub per_query: BTreeMap<QueryId, f64>,
    /// Rank of the positive, per query.
    pub ranks: BTreeMap<QueryId, usize>,
    pub n_queries: usize,
}

impl MetricsReport {
    /// Builds the report from the rank of the positive for each query.
    pub fn from_ranks(ranks: BTreeMap<QueryId, usize>) -> Result<Self> {
        if ranks.is_empty() {
            return Err(Error::invalid("no queries to evaluate"));
        }
        if let Some((q, _)) = ranks.iter().find(|(_, &r)| r == 0) {
            return Err(Error::invalid(format!("query {q} has rank 0")));
        }
        let n = ranks.len() as f64;
        let per_query: BTreeMap<QueryId, f64> = ranks.iter().map(|(&q, &r)| (q, 1.0 / r as f64)).collect();
        let top1 = ranks.values().filter(|&&r| r == 1).count();
        let top5 = ranks.values().filter(|&&r| r <= 5).count();
        let p_at_5 = top5 as f64 / (5.0 * n);
        Ok(MetricsReport {
            mrr: per_query.values().sum::<f64>() / n,
            p_at_1: top1 as f64 / n,
            p_at_5,
            recall_at_5: 5.0 * p_at_5,
            per_query,
            n_queries: ranks.len(),
            ranks,
        })
    }

    /// Per-query indicator of the positive ranked first.
    pub fn per_query_p1(&self) -> BTreeMap<QueryId, f64> {
        self.ranks
            .iter()
            .map(|(&q, &r)| (q, if r == 1 { 1.0 } else { 0.0 }))
            .collect()
    }
}

/// MRR, P@1, P@5 and Recall@5 over `(ranking, positive id)` pairs.
///
/// With one relevant candidate per query, P@5 is the Recall@5 share divided
/// by 5, and it is stored so that `recall_at_5 == 5.0 * p_at_5` holds
/// bit-for-bit.
pub fn compute_metrics(ranked: &[(RankedList, DocId)]) -> Result<MetricsReport> {
    if ranked.is_empty() {
        return Err(Error::invalid("no queries to evaluate"));
    }
    let mut ranks = BTreeMap::new();
    for (list, pos) in ranked {
        let r = list.rank_of(*pos).ok_or(Error::MissingPositive(*pos))?;
        if ranks.insert(list.query_id, r).is_some() {
            return Err(Error::invalid(format!("query {} evaluated twice", list.query_id)));
        }
    }
    MetricsReport::from_ranks(ranks)
}

/// Ranks a group's candidates with `scorer`, best first, ties by candidate
/// id.
pub fn rank_group(scorer: &dyn PairScorer, group: &QueryGroup) -> Result<RankedList> {
    let cands: Vec<_> = group.candidates.iter().map(|c| &c.tokens).collect();
    let scores = scorer.score_all(&group.query, &cands)?;
    Ok(RankedList::from_scores(
        group.query_id,
        group.candidates.iter().map(|c| c.doc_id).zip(scores),
    ))
}

fn positive_id(g: &QueryGroup) -> Result<DocId> {
    g.positive()
        .map(|c| c.doc_id)
        .ok_or_else(|| Error::invalid(format!("query {} does not have exactly one positive", g.query_id)))
}

/// Ranks every group in parallel and aggregates the metrics.
pub fn evaluate(scorer: &dyn PairScorer, groups: &[QueryGroup]) -> Result<MetricsReport> {
    let ranked: Vec<(RankedList, DocId)> = groups
        .par_iter()
        .map(|g| Ok((rank_group(scorer, g)?, positive_id(g)?)))
        .collect::<Result<_>>()?;
    compute_metrics(&ranked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classical::{Bm25, InvertedIndex, WordCount};
    use crate::data::{Candidate, Task};
    use crate::text::{SourceRole, TokenSequence};
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn list(qid: QueryId, order: &[DocId]) -> RankedList {
        let n = order.len() as f64;
        RankedList::from_scores(qid, order.iter().enumerate().map(|(i, &d)| (d, n - i as f64)))
    }

    #[test]
    fn ranks_one_two_four() {
        let r = compute_metrics(&[
            (list(1, &[7, 8, 9, 10]), 7),
            (list(2, &[7, 8, 9, 10]), 8),
            (list(3, &[7, 8, 9, 10]), 10),
        ])
        .unwrap();
        assert!((r.mrr - 1.75 / 3.0).abs() < 1e-15);
        assert!((r.p_at_1 - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.recall_at_5, 1.0);
        assert_eq!(r.n_queries, 3);
        assert_eq!(r.per_query[&3], 0.25);
    }

    #[test]
    fn rank_five_of_ten() {
        let order: Vec<DocId> = (0..10).collect();
        let r = compute_metrics(&[(list(1, &order), 4)]).unwrap();
        assert_eq!(r.recall_at_5, 1.0);
        assert_eq!(r.p_at_5, 0.2);
        assert_eq!(r.mrr, 0.2);
    }

    #[test]
    fn missing_positive_and_empty() {
        assert!(matches!(
            compute_metrics(&[(list(1, &[1, 2]), 3)]),
            Err(Error::MissingPositive(3))
        ));
        assert!(compute_metrics(&[]).is_err());
        assert!(compute_metrics(&[(list(1, &[1]), 1), (list(1, &[1]), 1)]).is_err());
    }

    #[test]
    fn random_permutations_match_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut input = Vec::new();
        for q in 0..200u64 {
            let n = rng.gen_range(1..=10);
            let mut order: Vec<DocId> = (0..n).collect();
            order.shuffle(&mut rng);
            let pos = rng.gen_range(0..n);
            input.push((list(q, &order), pos));
        }
        let r = compute_metrics(&input).unwrap();
        let (mut rr, mut p1, mut hits5) = (0.0, 0.0, 0.0);
        for (l, pos) in &input {
            let mut rank = 0;
            for (i, e) in l.entries.iter().enumerate() {
                if e.doc_id == *pos {
                    rank = i + 1;
                }
            }
            rr += 1.0 / rank as f64;
            p1 += f64::from(u8::from(rank == 1));
            hits5 += f64::from(u8::from(rank <= 5));
        }
        assert!((r.mrr - rr / 200.0).abs() < 1e-12);
        assert!((r.p_at_1 - p1 / 200.0).abs() < 1e-12);
        assert!((r.recall_at_5 - hits5 / 200.0).abs() < 1e-12);
        assert!((r.p_at_5 - hits5 / 1000.0).abs() < 1e-12);
        assert_eq!(r.recall_at_5, 5.0 * r.p_at_5);
    }

    fn seq(s: &str) -> TokenSequence {
        TokenSequence::from_whitespace(s, SourceRole::CandidateQuestion)
    }

    fn group(id: QueryId, q: &str, cands: &[(DocId, &str, bool)]) -> QueryGroup {
        QueryGroup {
            query_id: id,
            query: seq(q),
            candidates: cands
                .iter()
                .map(|&(d, t, label)| Candidate {
                    doc_id: d,
                    tokens: seq(t),
                    label,
                })
                .collect(),
            task: Task::Retrieval,
            context_questions: None,
        }
    }

    struct Const;
    impl PairScorer for Const {
        fn name(&self) -> &str {
            "const"
        }
        fn score(&self, _: &TokenSequence, _: &TokenSequence) -> Result<f64> {
            Ok(1.0)
        }
    }

    struct Label;
    impl PairScorer for Label {
        fn name(&self) -> &str {
            "label"
        }
        fn score(&self, _: &TokenSequence, p: &TokenSequence) -> Result<f64> {
            Ok(f64::from(u8::from(p.tokens()[0] == "pos")))
        }
    }

    #[test]
    fn constant_scorer_uses_id_order() {
        let g = group(1, "x", &[(9, "a", false), (3, "pos", true), (5, "b", false)]);
        assert_eq!(rank_group(&Const, &g).unwrap().doc_ids().collect::<Vec<_>>(), [3, 5, 9]);
        let g = group(1, "x", &[(1, "a", false), (3, "pos", true), (2, "b", false)]);
        assert_eq!(rank_group(&Label, &g).unwrap().rank_of(3), Some(1));
    }

    #[test]
    fn bm25_group_matches_exhaustive_sort() {
        let g = group(
            1,
            "cheap flight paris",
            &[
                (1, "paris flight deals", true),
                (2, "cheap cheap hotel", false),
                (3, "flight to rome", false),
                (4, "london weather", false),
                (5, "paris", false),
            ],
        );
        let idx = InvertedIndex::build(g.candidates.iter().map(|c| (c.doc_id, &c.tokens))).unwrap();
        let bm25 = Bm25::with_defaults(Arc::new(idx)).unwrap();
        let got = rank_group(&bm25, &g).unwrap();
        let mut want: Vec<(DocId, f64)> = g
            .candidates
            .iter()
            .map(|c| (c.doc_id, bm25.score(&g.query, &c.tokens).unwrap()))
            .collect();
        want.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        assert_eq!(got.doc_ids().collect::<Vec<_>>(), want.iter().map(|w| w.0).collect::<Vec<_>>());
    }

    #[test]
    fn evaluate_single_group_equals_per_query() {
        let g = group(4, "a b", &[(1, "a", false), (2, "a b", true), (3, "c", false)]);
        let r = evaluate(&WordCount, &[g]).unwrap();
        assert_eq!(r.mrr, r.per_query[&4]);
        assert_eq!(r.mrr, 1.0);
        let bad = group(5, "a", &[(1, "a", false)]);
        assert!(evaluate(&WordCount, &[bad]).is_err());
    }

    proptest! {
        #[test]
        fn order_of_groups_is_irrelevant(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut input: Vec<(RankedList, DocId)> = (0..20u64)
                .map(|q| {
                    let mut order: Vec<DocId> = (0..6).collect();
                    order.shuffle(&mut rng);
                    (list(q, &order), rng.gen_range(0..6))
                })
                .collect();
            let a = compute_metrics(&input).unwrap();
            input.shuffle(&mut rng);
            let b = compute_metrics(&input).unwrap();
            prop_assert!((a.mrr - b.mrr).abs() < 1e-15);
            prop_assert_eq!(a.ranks, b.ranks);
            prop_assert!(a.mrr >= 1.0 / 6.0 && a.mrr <= 1.0);
        }

        #[test]
        fn increasing_transform_keeps_ranking(scores in prop::collection::vec(-5.0f64..5.0, 1..12)) {
            let a = RankedList::from_scores(0, scores.iter().enumerate().map(|(i, &s)| (i as u64, s)));
            let b = RankedList::from_scores(0, scores.iter().enumerate().map(|(i, &s)| (i as u64, s.exp() * 3.0 + 1.0)));
            prop_assert_eq!(a.doc_ids().collect::<Vec<_>>(), b.doc_ids().collect::<Vec<_>>());
        }
    }
}
