use std::cmp::Ordering;

use rayon::prelude::*;

use super::{InvertedIndex, PairScorer};
use crate::text::TokenSequence;
use crate::{DocId, Error, QueryId, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedEntry {
    pub doc_id: DocId,
    pub score: f64,
}

/// Candidates ordered by descending score, ties by ascending doc id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankedList {
    pub query_id: QueryId,
    pub entries: Vec<RankedEntry>,
}

fn rank_order(a: &RankedEntry, b: &RankedEntry) -> Ordering {
    // NaN sorts last.
    let key = |s: f64| if s.is_nan() { f64::NEG_INFINITY } else { s };
    key(b.score)
        .total_cmp(&key(a.score))
        .then(a.doc_id.cmp(&b.doc_id))
}

impl RankedList {
    /// Sorts `(doc_id, score)` pairs into ranking order.
    pub fn from_scores(query_id: QueryId, scores: impl IntoIterator<Item = (DocId, f64)>) -> Self {
        let mut entries: Vec<RankedEntry> = scores
            .into_iter()
            .map(|(doc_id, score)| RankedEntry { doc_id, score })
            .collect();
        entries.sort_by(rank_order);
        Self { query_id, entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// 1-based rank of `doc_id`.
    pub fn rank_of(&self, doc_id: DocId) -> Option<usize> {
        self.entries.iter().position(|e| e.doc_id == doc_id).map(|i| i + 1)
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = DocId> + '_ {
        self.entries.iter().map(|e| e.doc_id)
    }

    fn truncate(&mut self, k: usize) {
        self.entries.truncate(k);
    }
}

/// Scores every indexed document sharing at least one term with `q` and
/// keeps the best `k`. Returns fewer than `k` entries when there are fewer
/// matching documents.
pub fn topk_retrieve(
    index: &InvertedIndex,
    q: &TokenSequence,
    k: usize,
    scorer: &dyn PairScorer,
) -> Result<RankedList> {
    if k == 0 {
        return Err(Error::invalid("top-k retrieval needs k >= 1"));
    }
    let scored: Vec<(DocId, f64)> = index
        .matching_docs(q)
        .into_par_iter()
        .map(|doc| Ok((index.doc_id(doc), scorer.score_doc(index, q, doc)?)))
        .collect::<Result<_>>()?;
    let mut list = RankedList::from_scores(0, scored);
    list.truncate(k);
    Ok(list)
}
