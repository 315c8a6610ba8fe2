//! Dataset construction: question-pair retrieval groups, dialog context
//! groups, splits, and the on-disk group format.

mod dialog;
mod io;
mod quora;
mod split;
pub mod synthetic;

use std::fmt;
use std::str::FromStr;

pub use dialog::{
    build_conversation_groups, parse_dialog_log, parse_dialog_str, ConversationOptions, ConversationStats, Dialog,
    Utterance,
};
pub use io::{load_groups, read_groups, save_groups, write_groups, Manifest};
pub use quora::{
    build_retrieval_groups, distinct_questions, parse_quora_tsv, question_index, read_quora_tsv, QuestionPair, QuoraParse,
    RetrievalOptions, RetrievalStats,
};
pub use split::{split, split_sizes};

use crate::text::TokenSequence;
use crate::{DocId, QueryId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Task {
    /// Question retrieval over question pairs.
    #[default]
    Retrieval,
    /// Next-question ranking from a dialog context.
    Conversation,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Retrieval => "retrieval",
            Task::Conversation => "conversation",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "retrieval" => Ok(Task::Retrieval),
            "conversation" => Ok(Task::Conversation),
            other => Err(crate::Error::invalid(format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub doc_id: DocId,
    pub tokens: TokenSequence,
    pub label: bool,
}

/// One query with its labelled candidate list.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryGroup {
    pub query_id: QueryId,
    pub query: TokenSequence,
    pub candidates: Vec<Candidate>,
    pub task: Task,
    /// Number of prior questions merged into a conversation context.
    pub context_questions: Option<usize>,
}

impl QueryGroup {
    pub fn positives(&self) -> impl Iterator<Item = &Candidate> {
        self.candidates.iter().filter(|c| c.label)
    }

    pub fn negatives(&self) -> impl Iterator<Item = &Candidate> {
        self.candidates.iter().filter(|c| !c.label)
    }

    /// The single positive, or `None` when there is not exactly one.
    pub fn positive(&self) -> Option<&Candidate> {
        let mut it = self.positives();
        match (it.next(), it.next()) {
            (Some(p), None) => Some(p),
            _ => None,
        }
    }
}
