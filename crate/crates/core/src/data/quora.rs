use std::collections::HashMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Candidate, QueryGroup, Task};
use crate::classical::{topk_retrieve, Bm25, InvertedIndex};
use crate::text::{remove_stopwords, tokenize, SourceRole, Stoplist, TokenSequence, TokenizeConfig};
use crate::{DocId, Error, Result};

/// One row of a labelled question-pair file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuestionPair {
    pub id: u64,
    pub qid1: DocId,
    pub qid2: DocId,
    pub text1: String,
    pub text2: String,
    pub is_duplicate: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QuoraParse {
    pub pairs: Vec<QuestionPair>,
    /// Rows whose label is not 0 or 1.
    pub bad_label: usize,
    /// Rows with missing fields or non-numeric ids.
    pub malformed: usize,
}

const COLUMNS: [&str; 6] = ["id", "qid1", "qid2", "question1", "question2", "is_duplicate"];

pub fn parse_quora_tsv(path: impl AsRef<Path>) -> Result<QuoraParse> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_quora_tsv(f, &path.display().to_string())
}

/// Parses a tab-separated pair file with a header naming the columns
/// `id, qid1, qid2, question1, question2, is_duplicate` in any order.
pub fn read_quora_tsv<R: Read>(r: R, origin: &str) -> Result<QuoraParse> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(true)
        .flexible(true)
        .from_reader(r);
    let header = rdr.headers().map_err(|e| Error::Parse {
        path: origin.to_string(),
        line: 1,
        msg: e.to_string(),
    })?;
    let mut cols = [0usize; 6];
    for (slot, name) in cols.iter_mut().zip(COLUMNS) {
        *slot = header.iter().position(|h| h.trim() == name).ok_or_else(|| Error::Parse {
            path: origin.to_string(),
            line: 1,
            msg: format!("header lacks column `{name}`"),
        })?;
    }

    let mut out = QuoraParse::default();
    for rec in rdr.records() {
        let Ok(rec) = rec else {
            out.malformed += 1;
            continue;
        };
        let field = |i: usize| rec.get(cols[i]);
        let ids = (
            field(0).and_then(|s| s.trim().parse::<u64>().ok()),
            field(1).and_then(|s| s.trim().parse::<u64>().ok()),
            field(2).and_then(|s| s.trim().parse::<u64>().ok()),
        );
        let (Some(id), Some(qid1), Some(qid2)) = ids else {
            out.malformed += 1;
            continue;
        };
        let (Some(text1), Some(text2), Some(label)) = (field(3), field(4), field(5)) else {
            out.malformed += 1;
            continue;
        };
        let is_duplicate = match label.trim() {
            "0" => false,
            "1" => true,
            _ => {
                out.bad_label += 1;
                continue;
            }
        };
        out.pairs.push(QuestionPair {
            id,
            qid1,
            qid2,
            text1: text1.to_string(),
            text2: text2.to_string(),
            is_duplicate,
        });
    }
    if out.bad_label + out.malformed > 0 {
        log::warn!(
            "{origin}: skipped {} rows with a bad label and {} malformed rows",
            out.bad_label,
            out.malformed
        );
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct RetrievalOptions {
    pub n_neg: usize,
    /// Number of lexical hits negatives are drawn from.
    pub depth: usize,
    pub seed: u64,
    pub tokenize: TokenizeConfig,
    pub stoplist: Stoplist,
}

impl Default for RetrievalOptions {
    fn default() -> Self {
        Self {
            n_neg: 4,
            depth: 1000,
            seed: 0,
            tokenize: TokenizeConfig::default(),
            stoplist: Stoplist::english(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RetrievalStats {
    pub positive_pairs: usize,
    pub groups: usize,
    /// Pairs with no usable lexical hit.
    pub dropped_no_hits: usize,
    /// Groups with fewer than `n_neg` negatives.
    pub short_groups: usize,
}

/// Distinct questions in first-seen order, tokenized.
pub fn distinct_questions(pairs: &[QuestionPair], cfg: TokenizeConfig) -> Vec<(DocId, TokenSequence)> {
    let mut seen = HashMap::new();
    let mut out = Vec::new();
    for p in pairs {
        for (qid, text) in [(p.qid1, &p.text1), (p.qid2, &p.text2)] {
            if seen.insert(qid, ()).is_none() {
                out.push((qid, tokenize(text, cfg).with_role(SourceRole::CandidateQuestion)));
            }
        }
    }
    out
}

/// Index over every distinct question with stopwords removed. A question id
/// seen twice keeps its first text.
pub fn question_index(pairs: &[QuestionPair], opts: &RetrievalOptions) -> Result<InvertedIndex> {
    let docs: Vec<(DocId, TokenSequence)> = distinct_questions(pairs, opts.tokenize)
        .into_iter()
        .map(|(id, t)| (id, remove_stopwords(&t, &opts.stoplist)))
        .collect();
    InvertedIndex::build(docs.iter().map(|(id, t)| (*id, t)))
}

/// One group per duplicate pair: a seeded coin picks which side is the
/// query, the other side is the positive, and up to `n_neg` negatives are
/// drawn uniformly from the top `depth` BM25 hits, excluding both sides.
pub fn build_retrieval_groups(
    pairs: &[QuestionPair],
    index: Arc<InvertedIndex>,
    opts: &RetrievalOptions,
) -> Result<(Vec<QueryGroup>, RetrievalStats)> {
    if opts.depth == 0 {
        return Err(Error::invalid("retrieval depth must be positive"));
    }
    let texts: HashMap<DocId, TokenSequence> = distinct_questions(pairs, opts.tokenize).into_iter().collect();
    let bm25 = Bm25::with_defaults(index.clone())?;
    let positives: Vec<&QuestionPair> = pairs.iter().filter(|p| p.is_duplicate).collect();

    let built: Vec<Option<(QueryGroup, bool)>> = positives
        .par_iter()
        .enumerate()
        .map(|(k, pair)| -> Result<_> {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(k as u64);
            let (q_id, p_id) = if rng.gen_bool(0.5) {
                (pair.qid1, pair.qid2)
            } else {
                (pair.qid2, pair.qid1)
            };
            let query = texts[&q_id].clone().with_role(SourceRole::QueryQuestion);
            let probe = remove_stopwords(&query, &opts.stoplist);
            let hits: Vec<DocId> = if probe.is_empty() {
                Vec::new()
            } else {
                topk_retrieve(&index, &probe, opts.depth, &bm25)?
                    .doc_ids()
                    .filter(|&d| d != q_id && d != p_id)
                    .collect()
            };
            if hits.is_empty() {
                return Ok(None);
            }
            let n = opts.n_neg.min(hits.len());
            let mut candidates = vec![Candidate {
                doc_id: p_id,
                tokens: texts[&p_id].clone(),
                label: true,
            }];
            for i in sample(&mut rng, hits.len(), n) {
                candidates.push(Candidate {
                    doc_id: hits[i],
                    tokens: texts[&hits[i]].clone(),
                    label: false,
                });
            }
            let group = QueryGroup {
                query_id: pair.id,
                query,
                candidates,
                task: Task::Retrieval,
                context_questions: None,
            };
            Ok(Some((group, n < opts.n_neg)))
        })
        .collect::<Result<_>>()?;

    let mut stats = RetrievalStats {
        positive_pairs: positives.len(),
        ..Default::default()
    };
    let mut groups = Vec::with_capacity(built.len());
    for b in built {
        match b {
            None => stats.dropped_no_hits += 1,
            Some((g, short)) => {
                stats.short_groups += usize::from(short);
                groups.push(g);
            }
        }
    }
    stats.groups = groups.len();
    if stats.dropped_no_hits > 0 {
        log::info!("dropped {} pairs without lexical hits", stats.dropped_no_hits);
    }
    Ok((groups, stats))
}
