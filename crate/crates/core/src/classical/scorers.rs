use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use super::{DocIdx, InvertedIndex, TranslationTable};
use crate::text::{overlap_features, remove_stopwords, Stoplist, TokenSequence};
use crate::{Error, Result};

pub const DEFAULT_BM25_K1: f64 = 1.2;
pub const DEFAULT_BM25_B: f64 = 0.75;
pub const DEFAULT_QL_MU: f64 = 2500.0;

/// Scores a candidate against a query. Higher is better.
pub trait PairScorer: Send + Sync {
    fn name(&self) -> &str;

    fn score(&self, query: &TokenSequence, candidate: &TokenSequence) -> Result<f64>;

    /// Scores an indexed document. Scorers that can read statistics
    /// straight from the postings override this.
    fn score_doc(&self, index: &InvertedIndex, query: &TokenSequence, doc: DocIdx) -> Result<f64> {
        self.score(query, &index.doc_tokens(doc))
    }

    /// Scores every candidate of one query.
    fn score_all(&self, query: &TokenSequence, candidates: &[&TokenSequence]) -> Result<Vec<f64>> {
        candidates.iter().map(|c| self.score(query, c)).collect()
    }
}

fn bag(seq: &TokenSequence) -> BTreeMap<&str, u32> {
    let mut m = BTreeMap::new();
    for t in seq.iter() {
        *m.entry(t).or_default() += 1;
    }
    m
}

fn distinct(seq: &TokenSequence) -> Vec<&str> {
    let mut seen = HashSet::new();
    seq.iter().filter(|t| seen.insert(*t)).collect()
}

pub fn word_count_score(q: &TokenSequence, p: &TokenSequence) -> f64 {
    overlap_features(q, p, |_| 1.0).count as f64
}

pub fn word_count_idf_score<F: Fn(&str) -> f64>(q: &TokenSequence, p: &TokenSequence, idf: F) -> f64 {
    overlap_features(q, p, idf).idf_weighted
}

/// Cosine similarity of raw-tf times smoothed-idf vectors.
pub fn vsm_score(q: &TokenSequence, p: &TokenSequence, index: &InvertedIndex) -> f64 {
    let qb = bag(q);
    let pb = bag(p);
    let weight = |t: &str, tf: u32| tf as f64 * index.idf(t);
    let qn: f64 = qb.iter().map(|(t, &tf)| weight(t, tf).powi(2)).sum();
    let pn: f64 = pb.iter().map(|(t, &tf)| weight(t, tf).powi(2)).sum();
    if qn == 0.0 || pn == 0.0 {
        return 0.0;
    }
    let dot: f64 = qb
        .iter()
        .filter_map(|(t, &tf)| pb.get(t).map(|&ptf| weight(t, tf) * weight(t, ptf)))
        .sum();
    dot / (qn.sqrt() * pn.sqrt())
}

fn check_bm25(index: &InvertedIndex, k1: f64, b: f64) -> Result<()> {
    if index.is_empty() {
        return Err(Error::EmptyIndex);
    }
    if k1.is_nan() || k1 < 0.0 || !(0.0..=1.0).contains(&b) {
        return Err(Error::invalid(format!("bm25 needs k1 >= 0 and 0 <= b <= 1 (k1={k1}, b={b})")));
    }
    Ok(())
}

fn bm25_term(index: &InvertedIndex, term: &str, tf: u32, doc_len: f64, k1: f64, b: f64) -> f64 {
    if tf == 0 {
        return 0.0;
    }
    let avgdl = index.avg_doc_len();
    let ratio = if avgdl > 0.0 { doc_len / avgdl } else { 1.0 };
    let tf = tf as f64;
    index.bm25_idf(term) * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * ratio))
}

/// BM25 with `p` as the document. Collection statistics come from `index`.
pub fn bm25_score(q: &TokenSequence, p: &TokenSequence, index: &InvertedIndex, k1: f64, b: f64) -> Result<f64> {
    check_bm25(index, k1, b)?;
    let pb = bag(p);
    let len = p.len() as f64;
    Ok(distinct(q)
        .into_iter()
        .map(|t| bm25_term(index, t, pb.get(t).copied().unwrap_or(0), len, k1, b))
        .sum())
}

fn check_mu(mu: f64) -> Result<()> {
    if mu > 0.0 && mu.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("dirichlet mu must be positive and finite, got {mu}")))
    }
}

fn dirichlet_log(mass: f64, len: f64, p_coll: f64, mu: f64) -> f64 {
    ((mass + mu * p_coll) / (len + mu)).ln()
}

/// Dirichlet-smoothed query likelihood in log space. Query terms that never
/// occur in the collection are skipped.
pub fn ql_score(q: &TokenSequence, p: &TokenSequence, index: &InvertedIndex, mu: f64) -> Result<f64> {
    check_mu(mu)?;
    let pb = bag(p);
    let len = p.len() as f64;
    Ok(q.iter()
        .filter_map(|w| {
            let pc = index.collection_prob(w);
            (pc > 0.0).then(|| dirichlet_log(pb.get(w).copied().unwrap_or(0) as f64, len, pc, mu))
        })
        .sum())
}

/// Translation-based language model: the maximum-likelihood document model
/// is mixed with translated probability mass before Dirichlet smoothing.
pub fn trlm_score(
    q: &TokenSequence,
    p: &TokenSequence,
    index: &InvertedIndex,
    table: &TranslationTable,
    beta: f64,
    mu: f64,
) -> Result<f64> {
    check_mu(mu)?;
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::invalid(format!("trlm beta must lie in [0, 1], got {beta}")));
    }
    let pb = bag(p);
    let len = p.len() as f64;
    Ok(q.iter()
        .filter_map(|w| {
            let pc = index.collection_prob(w);
            if pc <= 0.0 {
                return None;
            }
            let mixed = if len > 0.0 {
                let ml = pb.get(w).copied().unwrap_or(0) as f64 / len;
                let translated: f64 = pb
                    .iter()
                    .map(|(t, &tf)| table.prob(w, t) * tf as f64 / len)
                    .sum();
                beta * translated + (1.0 - beta) * ml
            } else {
                0.0
            };
            Some(dirichlet_log(len * mixed, len, pc, mu))
        })
        .sum())
}

#[derive(Debug, Clone, Default)]
pub struct WordCount;

impl PairScorer for WordCount {
    fn name(&self) -> &str {
        "wordcount"
    }

    fn score(&self, q: &TokenSequence, p: &TokenSequence) -> Result<f64> {
        Ok(word_count_score(q, p))
    }
}

#[derive(Debug, Clone)]
pub struct WordCountIdf {
    pub index: Arc<InvertedIndex>,
}

impl PairScorer for WordCountIdf {
    fn name(&self) -> &str {
        "wordcount-idf"
    }

    fn score(&self, q: &TokenSequence, p: &TokenSequence) -> Result<f64> {
        Ok(word_count_idf_score(q, p, |t| self.index.idf(t)))
    }
}

#[derive(Debug, Clone)]
pub struct Vsm {
    pub index: Arc<InvertedIndex>,
}

impl PairScorer for Vsm {
    fn name(&self) -> &str {
        "vsm"
    }

    fn score(&self, q: &TokenSequence, p: &TokenSequence) -> Result<f64> {
        Ok(vsm_score(q, p, &self.index))
    }
}

#[derive(Debug, Clone)]
pub struct Bm25 {
    index: Arc<InvertedIndex>,
    k1: f64,
    b: f64,
}

impl Bm25 {
    pub fn new(index: Arc<InvertedIndex>, k1: f64, b: f64) -> Result<Self> {
        check_bm25(&index, k1, b)?;
        Ok(Self { index, k1, b })
    }

    pub fn with_defaults(index: Arc<InvertedIndex>) -> Result<Self> {
        Self::new(index, DEFAULT_BM25_K1, DEFAULT_BM25_B)
    }
}

impl PairScorer for Bm25 {
    fn name(&self) -> &str {
        "bm25"
    }

    fn score(&self, q: &TokenSequence, p: &TokenSequence) -> Result<f64> {
        bm25_score(q, p, &self.index, self.k1, self.b)
    }

    fn score_doc(&self, index: &InvertedIndex, q: &TokenSequence, doc: DocIdx) -> Result<f64> {
        check_bm25(index, self.k1, self.b)?;
        let len = index.doc_len(doc) as f64;
        Ok(distinct(q)
            .into_iter()
            .map(|t| bm25_term(index, t, index.tf(t, doc), len, self.k1, self.b))
            .sum())
    }
}

#[derive(Debug, Clone)]
pub struct QueryLikelihood {
    index: Arc<InvertedIndex>,
    mu: f64,
}

impl QueryLikelihood {
    pub fn new(index: Arc<InvertedIndex>, mu: f64) -> Result<Self> {
        check_mu(mu)?;
        Ok(Self { index, mu })
    }
}

impl PairScorer for QueryLikelihood {
    fn name(&self) -> &str {
        "ql"
    }

    fn score(&self, q: &TokenSequence, p: &TokenSequence) -> Result<f64> {
        ql_score(q, p, &self.index, self.mu)
    }
}

#[derive(Debug, Clone)]
pub struct Trlm {
    index: Arc<InvertedIndex>,
    table: Arc<TranslationTable>,
    beta: f64,
    mu: f64,
}

impl Trlm {
    pub fn new(index: Arc<InvertedIndex>, table: Arc<TranslationTable>, beta: f64, mu: f64) -> Result<Self> {
        let empty = TokenSequence::default();
        trlm_score(&empty, &empty, &index, &table, beta, mu)?;
        Ok(Self {
            index,
            table,
            beta,
            mu,
        })
    }
}

impl PairScorer for Trlm {
    fn name(&self) -> &str {
        "trlm"
    }

    fn score(&self, q: &TokenSequence, p: &TokenSequence) -> Result<f64> {
        trlm_score(q, p, &self.index, &self.table, self.beta, self.mu)
    }
}

/// Removes stopwords from both sides before delegating.
pub struct Stopped<S> {
    pub inner: S,
    pub stoplist: Arc<Stoplist>,
}

impl<S: PairScorer> PairScorer for Stopped<S> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn score(&self, q: &TokenSequence, p: &TokenSequence) -> Result<f64> {
        self.inner
            .score(&remove_stopwords(q, &self.stoplist), &remove_stopwords(p, &self.stoplist))
    }
}
