use std::sync::Arc;

use crate::classical::{InvertedIndex, PairScorer};
use crate::data::QueryGroup;
use crate::model::MatchModel;
use crate::text::{overlap_features, remove_stopwords, IdSequence, OverlapFeatures, Stoplist, TokenSequence, Vocab};
use crate::{DocId, QueryId, Result};

/// Turns token sequences into model inputs: vocabulary ids plus the two
/// overlap features, computed on stopword-free tokens with the index IDF.
#[derive(Debug, Clone)]
pub struct Featurizer {
    pub vocab: Arc<Vocab>,
    pub stoplist: Arc<Stoplist>,
    pub index: Arc<InvertedIndex>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedCandidate {
    pub doc_id: DocId,
    pub ids: IdSequence,
    pub feats: OverlapFeatures,
    pub label: bool,
}

/// A query group encoded once, ready for repeated scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedGroup {
    pub query_id: QueryId,
    pub query: IdSequence,
    pub candidates: Vec<PreparedCandidate>,
}

impl PreparedGroup {
    pub fn positive(&self) -> Option<&PreparedCandidate> {
        let mut it = self.candidates.iter().filter(|c| c.label);
        match (it.next(), it.next()) {
            (Some(c), None) => Some(c),
            _ => None,
        }
    }
}

impl Featurizer {
    pub fn new(vocab: Arc<Vocab>, stoplist: Arc<Stoplist>, index: Arc<InvertedIndex>) -> Self {
        Self { vocab, stoplist, index }
    }

    /// Vocabulary ids. An empty sequence becomes a single unknown token so
    /// that every input can be encoded.
    pub fn ids(&self, seq: &TokenSequence) -> IdSequence {
        let ids = self.vocab.encode(seq);
        if ids.is_empty() {
            IdSequence(vec![self.vocab.unk_id()])
        } else {
            ids
        }
    }

    pub fn features(&self, q: &TokenSequence, p: &TokenSequence) -> OverlapFeatures {
        overlap_features(
            &remove_stopwords(q, &self.stoplist),
            &remove_stopwords(p, &self.stoplist),
            |t| self.index.idf(t),
        )
    }

    pub fn prepare(&self, g: &QueryGroup) -> PreparedGroup {
        let q = remove_stopwords(&g.query, &self.stoplist);
        PreparedGroup {
            query_id: g.query_id,
            query: self.ids(&g.query),
            candidates: g
                .candidates
                .iter()
                .map(|c| PreparedCandidate {
                    doc_id: c.doc_id,
                    ids: self.ids(&c.tokens),
                    feats: overlap_features(&q, &remove_stopwords(&c.tokens, &self.stoplist), |t| {
                        self.index.idf(t)
                    }),
                    label: c.label,
                })
                .collect(),
        }
    }

    pub fn prepare_all(&self, groups: &[QueryGroup]) -> Vec<PreparedGroup> {
        use rayon::prelude::*;
        groups.par_iter().map(|g| self.prepare(g)).collect()
    }
}

/// A trained model exposed as a [`PairScorer`].
#[derive(Debug, Clone)]
pub struct NeuralScorer {
    pub model: Arc<MatchModel>,
    pub featurizer: Featurizer,
}

impl PairScorer for NeuralScorer {
    fn name(&self) -> &str {
        "neural"
    }

    fn score(&self, q: &TokenSequence, p: &TokenSequence) -> Result<f64> {
        let f = &self.featurizer;
        self.model.score_pair(&f.ids(q), &f.ids(p), f.features(q, p))
    }

    fn score_all(&self, q: &TokenSequence, candidates: &[&TokenSequence]) -> Result<Vec<f64>> {
        let f = &self.featurizer;
        let inputs: Vec<(IdSequence, OverlapFeatures)> =
            candidates.iter().map(|p| (f.ids(p), f.features(q, p))).collect();
        let refs: Vec<(&IdSequence, OverlapFeatures)> = inputs.iter().map(|(i, x)| (i, *x)).collect();
        self.model.score_candidates(&f.ids(q), &refs)
    }
}
