//! Tokenization, vocabularies, stopword filtering and word-overlap features.

mod overlap;
mod stopwords;
mod tokenize;
mod vocab;

pub use overlap::{overlap_features, smoothed_idf, OverlapFeatures};
pub use stopwords::{remove_stopwords, Stoplist};
pub use tokenize::{tokenize, PunctPolicy, SourceRole, TokenSequence, TokenizeConfig};
pub use vocab::{build_vocab, IdSequence, Vocab, UNK_TOKEN};

/// Reserved token placed between utterances of a merged conversation
/// context. The tokenizer can never emit it.
pub const SEPARATOR_TOKEN: &str = "__eou__";
