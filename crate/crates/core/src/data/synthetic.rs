//! Seeded generators for artificial question pairs and chat logs.
//!
//! Words are made-up syllable strings. Questions draw most content words
//! from a topic cluster so lexical retrieval returns plausible, related
//! negatives.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dialog, QuestionPair, Utterance};

const SYLLABLES: [&str; 12] = ["ka", "lo", "mi", "ne", "ru", "sa", "ti", "vo", "pe", "zu", "da", "fi"];
const STARTERS: [&str; 6] = ["how do i", "what is the", "why does the", "can i", "which is the best", "where can i find"];

/// The `i`-th made-up word, unique per index.
pub fn word(i: usize) -> String {
    let mut n = i + SYLLABLES.len();
    let mut parts = Vec::new();
    while n > 0 {
        parts.push(SYLLABLES[n % SYLLABLES.len()]);
        n /= SYLLABLES.len();
    }
    parts.concat()
}

#[derive(Debug, Clone)]
pub struct ParaphraseConfig {
    /// Duplicate pairs, one retrieval group each.
    pub n_pairs: usize,
    /// Extra non-duplicate pairs that only enlarge the candidate pool.
    pub n_distractor_pairs: usize,
    pub n_topics: usize,
    pub words_per_topic: usize,
    pub min_words: usize,
    pub max_words: usize,
    /// Share of words dropped from the query to form its paraphrase.
    pub dropout: f64,
    /// Chance of replacing each kept word by its dictionary synonym.
    pub synonym_rate: f64,
    pub seed: u64,
}

impl Default for ParaphraseConfig {
    fn default() -> Self {
        Self {
            n_pairs: 2000,
            n_distractor_pairs: 1000,
            n_topics: 60,
            words_per_topic: 12,
            min_words: 5,
            max_words: 9,
            dropout: 0.2,
            synonym_rate: 0.3,
            seed: 0,
        }
    }
}

/// Word list with a synonym for every entry.
#[derive(Debug, Clone)]
pub struct Lexicon {
    pub words: Vec<String>,
    pub synonyms: Vec<String>,
}

impl Lexicon {
    pub fn new(n: usize) -> Self {
        Self {
            words: (0..n).map(word).collect(),
            synonyms: (n..2 * n).map(word).collect(),
        }
    }

    pub fn synonym(&self, w: &str) -> Option<&str> {
        self.words.iter().position(|x| x == w).map(|i| self.synonyms[i].as_str())
    }
}

fn question<R: Rng>(rng: &mut R, cfg: &ParaphraseConfig, lex: &Lexicon) -> Vec<String> {
    let topic = rng.gen_range(0..cfg.n_topics);
    let n = rng.gen_range(cfg.min_words..=cfg.max_words);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let idx = if rng.gen_bool(0.8) {
            topic * cfg.words_per_topic + rng.gen_range(0..cfg.words_per_topic)
        } else {
            rng.gen_range(0..lex.words.len())
        };
        let w = &lex.words[idx];
        if !out.contains(w) {
            out.push(w.clone());
        }
    }
    out
}

fn paraphrase<R: Rng>(rng: &mut R, words: &[String], cfg: &ParaphraseConfig, lex: &Lexicon) -> Vec<String> {
    let drop = ((words.len() as f64) * cfg.dropout).round() as usize;
    let mut keep: Vec<usize> = (0..words.len()).collect();
    keep.shuffle(rng);
    keep.truncate(words.len() - drop.min(words.len() - 1));
    keep.sort_unstable();
    keep.into_iter()
        .map(|i| {
            let w = &words[i];
            match lex.synonym(w) {
                Some(s) if rng.gen_bool(cfg.synonym_rate) => s.to_string(),
                _ => w.clone(),
            }
        })
        .collect()
}

fn render<R: Rng>(rng: &mut R, words: &[String]) -> String {
    format!("{} {}?", STARTERS.choose(rng).expect("non-empty"), words.join(" "))
}

/// Duplicate pairs first, then distractor pairs. Question ids are
/// `2k` and `2k + 1` for pair `k`.
pub fn paraphrase_pairs(cfg: &ParaphraseConfig) -> Vec<QuestionPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let lex = Lexicon::new(cfg.n_topics * cfg.words_per_topic);
    let total = cfg.n_pairs + cfg.n_distractor_pairs;
    (0..total)
        .map(|k| {
            let q = question(&mut rng, cfg, &lex);
            let dup = k < cfg.n_pairs;
            let other = if dup {
                paraphrase(&mut rng, &q, cfg, &lex)
            } else {
                question(&mut rng, cfg, &lex)
            };
            QuestionPair {
                id: k as u64,
                qid1: 2 * k as u64,
                qid2: 2 * k as u64 + 1,
                text1: render(&mut rng, &q),
                text2: render(&mut rng, &other),
                is_duplicate: dup,
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct DialogConfig {
    pub n_dialogs: usize,
    pub min_utterances: usize,
    pub max_utterances: usize,
    pub question_rate: f64,
    pub seed: u64,
}

impl Default for DialogConfig {
    fn default() -> Self {
        Self {
            n_dialogs: 100,
            min_utterances: 8,
            max_utterances: 40,
            question_rate: 0.4,
            seed: 0,
        }
    }
}

/// Chat logs with several speakers, questions that sometimes address
/// another speaker by name, and occasional very short questions.
pub fn dialogs(cfg: &DialogConfig) -> Vec<Dialog> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let lex = Lexicon::new(400);
    (0..cfg.n_dialogs)
        .map(|d| {
            let n_speakers = rng.gen_range(2..=5);
            let speakers: Vec<String> = (0..n_speakers)
                .map(|_| format!("{}{}", lex.words[rng.gen_range(0..lex.words.len())], rng.gen_range(0..100)))
                .collect();
            let n = rng.gen_range(cfg.min_utterances..=cfg.max_utterances);
            let mut minute = rng.gen_range(0..600);
            let utterances = (0..n)
                .map(|_| {
                    minute = (minute + rng.gen_range(0..3)) % 1440;
                    let speaker = speakers.choose(&mut rng).expect("speakers").clone();
                    let n_words = rng.gen_range(1..8);
                    let body: Vec<&str> = (0..n_words)
                        .map(|_| lex.words[rng.gen_range(0..lex.words.len())].as_str())
                        .collect();
                    let mut text = body.join(" ");
                    if rng.gen_bool(cfg.question_rate) {
                        text.push('?');
                        if rng.gen_bool(0.3) {
                            let to = speakers.choose(&mut rng).expect("speakers");
                            text = format!("{to}, {text}");
                        }
                    }
                    Utterance {
                        time: format!("{:02}:{:02}", minute / 60, minute % 60),
                        speaker,
                        text,
                    }
                })
                .collect();
            Dialog {
                date: format!("day{d:05}"),
                utterances,
            }
        })
        .collect()
}

/// Renders a dialog in the `[HH:MM] <speaker> text` log format.
pub fn render_log(d: &Dialog) -> String {
    d.utterances
        .iter()
        .map(|u| format!("[{}] <{}> {}\n", u.time, u.speaker, u.text))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::parse_dialog_str;

    #[test]
    fn words_are_unique() {
        let w: std::collections::HashSet<String> = (0..5000).map(word).collect();
        assert_eq!(w.len(), 5000);
        assert!(word(0).chars().all(|c| c.is_ascii_lowercase()));
    }

    #[test]
    fn paraphrase_keeps_most_words() {
        let cfg = ParaphraseConfig {
            n_pairs: 50,
            n_distractor_pairs: 10,
            ..Default::default()
        };
        let pairs = paraphrase_pairs(&cfg);
        assert_eq!(pairs.len(), 60);
        assert!(pairs[..50].iter().all(|p| p.is_duplicate));
        assert!(pairs[50..].iter().all(|p| !p.is_duplicate));
        assert_eq!(paraphrase_pairs(&cfg), pairs);
    }

    #[test]
    fn logs_round_trip_through_parser() {
        let ds = dialogs(&DialogConfig {
            n_dialogs: 5,
            ..Default::default()
        });
        for d in &ds {
            assert_eq!(&parse_dialog_str(&render_log(d), &d.date), d);
        }
    }
}
