//! Question matching engine for two ranking tasks: similar-question
//! retrieval and next-question prediction in conversations.
//!
//! The crate is organised bottom-up:
//!
//! - [`text`]: tokenization, vocabularies, stopwords and word-overlap features
//! - [`classical`]: inverted index, lexical scorers (BM25, QL, TRLM, VSM, ...)
//!   and top-k retrieval
//! - [`embed`]: pretrained word vectors with deterministic OOV draws
//! - [`nn`]: a small reverse-mode autodiff engine, Adam and gradient checking
//! - [`model`]: the CNN-Match and LSTM-CNN-Match siamese matchers
//! - [`train`]: pairwise hinge-loss training with dev-set model selection
//! - [`data`]: dataset construction from question pairs and chat logs
//! - [`eval`]: ranking metrics, significance tests and score fusion

pub mod classical;
pub mod data;
pub mod embed;
mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod text;
pub mod train;

pub use error::{Error, Result};

/// Identifier of a candidate question (or any indexed document).
pub type DocId = u64;

/// Identifier of a query group.
pub type QueryId = u64;
