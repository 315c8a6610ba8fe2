//! Inverted index, lexical scorers and top-k retrieval.

mod index;
mod retrieve;
mod scorers;
mod translation;

pub use index::{DocIdx, InvertedIndex, Posting};
pub use retrieve::{topk_retrieve, RankedEntry, RankedList};
pub use scorers::{
    bm25_score, ql_score, trlm_score, vsm_score, word_count_idf_score, word_count_score, Bm25,
    PairScorer, QueryLikelihood, Stopped, Trlm, Vsm, WordCount, WordCountIdf, DEFAULT_BM25_B,
    DEFAULT_BM25_K1, DEFAULT_QL_MU,
};
pub use translation::{train_translation_table, TranslationTable, TranslationTraining};
