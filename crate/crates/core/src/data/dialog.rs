use std::collections::HashSet;
use std::path::Path;
use std::sync::OnceLock;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use regex::Regex;

use super::{Candidate, QueryGroup, Task};
use crate::text::{tokenize, SourceRole, TokenSequence, TokenizeConfig, SEPARATOR_TOKEN};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    /// `HH:MM` as written in the log.
    pub time: String,
    pub speaker: String,
    pub text: String,
}

impl Utterance {
    pub fn is_question(&self) -> bool {
        self.text.contains('?')
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dialog {
    pub date: String,
    pub utterances: Vec<Utterance>,
}

fn line_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\[(\d{2}:\d{2})\]\s+<([^>]+)>\s?(.*)$").expect("valid regex"))
}

/// Parses `[HH:MM] <speaker> text` lines. Anything else (joins, parts,
/// blank lines) is skipped.
pub fn parse_dialog_str(text: &str, date: &str) -> Dialog {
    let utterances = text
        .lines()
        .filter_map(|l| {
            let c = line_re().captures(l.trim_end_matches('\r'))?;
            Some(Utterance {
                time: c[1].to_string(),
                speaker: c[2].to_string(),
                text: c[3].to_string(),
            })
        })
        .collect();
    Dialog {
        date: date.to_string(),
        utterances,
    }
}

/// Reads one log file. The dialog date is the file stem.
pub fn parse_dialog_log(path: impl AsRef<Path>) -> Result<Dialog> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let date = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(parse_dialog_str(&text, &date))
}

#[derive(Debug, Clone)]
pub struct ConversationOptions {
    /// Upper bound of the sampled number of prior questions.
    pub max_context: usize,
    pub n_neg: usize,
    /// Minimum question length in tokens, after speaker names are removed.
    pub min_question_len: usize,
    pub seed: u64,
    pub tokenize: TokenizeConfig,
}

impl Default for ConversationOptions {
    fn default() -> Self {
        Self {
            max_context: 6,
            n_neg: 9,
            min_question_len: 3,
            seed: 0,
            tokenize: TokenizeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConversationStats {
    pub questions: usize,
    pub groups: usize,
    pub skipped_few_prior: usize,
    pub skipped_short: usize,
    pub skipped_small_pool: usize,
}

struct PoolEntry {
    dialog: usize,
    utterance: usize,
    tokens: TokenSequence,
}

fn speaker_tokens(d: &Dialog, cfg: TokenizeConfig) -> HashSet<String> {
    d.utterances
        .iter()
        .flat_map(|u| tokenize(&u.speaker, cfg).tokens().to_vec())
        .collect()
}

fn strip(tokens: &TokenSequence, names: &HashSet<String>) -> TokenSequence {
    TokenSequence::new(
        tokens.iter().filter(|t| !names.contains(*t)),
        SourceRole::CandidateQuestion,
    )
}

/// Builds one group per eligible question. Dialogs are processed in the
/// order given; question `k` in that order uses random stream `k`.
pub fn build_conversation_groups(
    dialogs: &[Dialog],
    opts: &ConversationOptions,
) -> Result<(Vec<QueryGroup>, ConversationStats)> {
    if opts.max_context < 2 {
        return Err(Error::invalid("max_context must be at least 2"));
    }
    let cfg = opts.tokenize;
    let names: Vec<HashSet<String>> = dialogs.iter().map(|d| speaker_tokens(d, cfg)).collect();
    let mut pool = Vec::new();
    for (di, d) in dialogs.iter().enumerate() {
        for (ui, u) in d.utterances.iter().enumerate() {
            if u.is_question() {
                pool.push(PoolEntry {
                    dialog: di,
                    utterance: ui,
                    tokens: strip(&tokenize(&u.text, cfg), &names[di]),
                });
            }
        }
    }

    // Position of every question among the questions of its own dialog.
    let mut nth = Vec::with_capacity(pool.len());
    let mut first_of_dialog = Vec::with_capacity(pool.len());
    let mut start = 0;
    for k in 0..pool.len() {
        if k > 0 && pool[k].dialog != pool[k - 1].dialog {
            start = k;
        }
        nth.push(k - start);
        first_of_dialog.push(start);
    }

    #[derive(Clone, Copy)]
    enum Outcome {
        FewPrior,
        Short,
        SmallPool,
    }

    let built: Vec<std::result::Result<QueryGroup, Outcome>> = (0..pool.len())
        .into_par_iter()
        .map(|k| {
            let entry = &pool[k];
            let t = nth[k];
            if t < 2 {
                return Err(Outcome::FewPrior);
            }
            if entry.tokens.len() < opts.min_question_len {
                return Err(Outcome::Short);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(k as u64);
            let c = rng.gen_range(2..=opts.max_context);
            let used = c.min(t);

            let dialog = &dialogs[entry.dialog];
            let from = pool[first_of_dialog[k] + t - used].utterance;
            let mut context: Vec<String> = Vec::new();
            for u in &dialog.utterances[from..entry.utterance] {
                if !context.is_empty() {
                    context.push(SEPARATOR_TOKEN.to_string());
                }
                context.extend(tokenize(&u.speaker, cfg).tokens().iter().cloned());
                context.extend(tokenize(&u.text, cfg).tokens().iter().cloned());
            }
            let query = TokenSequence::new(context, SourceRole::Context);

            let eligible: Vec<usize> = (0..pool.len())
                .filter(|&j| j != k && pool[j].tokens != entry.tokens && !pool[j].tokens.is_empty())
                .collect();
            if eligible.len() < opts.n_neg {
                return Err(Outcome::SmallPool);
            }
            let mut candidates = vec![Candidate {
                doc_id: k as u64,
                tokens: entry.tokens.clone(),
                label: true,
            }];
            for i in sample(&mut rng, eligible.len(), opts.n_neg) {
                let j = eligible[i];
                candidates.push(Candidate {
                    doc_id: j as u64,
                    tokens: pool[j].tokens.clone(),
                    label: false,
                });
            }
            Ok(QueryGroup {
                query_id: k as u64,
                query,
                candidates,
                task: Task::Conversation,
                context_questions: Some(used),
            })
        })
        .collect();

    let mut stats = ConversationStats {
        questions: pool.len(),
        ..Default::default()
    };
    let mut groups = Vec::new();
    for b in built {
        match b {
            Ok(g) => groups.push(g),
            Err(Outcome::FewPrior) => stats.skipped_few_prior += 1,
            Err(Outcome::Short) => stats.skipped_short += 1,
            Err(Outcome::SmallPool) => stats.skipped_small_pool += 1,
        }
    }
    stats.groups = groups.len();
    Ok((groups, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = "\
[16:01] <gplikespie> how do I get the new kernel onto my usb stick?
[16:02] <etroshica> gplikespie, there is a variety of methods
=== bob joined #ubuntu
";

    #[test]
    fn parses_two_utterances() {
        let d = parse_dialog_str(EXAMPLE, "2007-01-01");
        assert_eq!(d.utterances.len(), 2);
        assert_eq!(d.utterances[0].speaker, "gplikespie");
        assert_eq!(d.utterances[1].speaker, "etroshica");
        assert_eq!(d.utterances[1].time, "16:02");
        assert!(d.utterances[0].is_question());
    }

    #[test]
    fn status_lines_skipped() {
        let d = parse_dialog_str("*** user joined\n[10:00] <a> hi\n[bad] <x> y\n", "d");
        assert_eq!(d.utterances.len(), 1);
        assert_eq!(d.utterances[0].text, "hi");
    }

    #[test]
    fn matches_independent_line_split() {
        let mut text = String::new();
        let mut want = Vec::new();
        for i in 0..100 {
            if i % 7 == 3 {
                text.push_str(&format!("*** user{i} has quit\n"));
            } else {
                let (time, sp, msg) = (format!("{:02}:{:02}", i / 60, i % 60), format!("u{}", i % 5), format!("line {i} <ok>"));
                text.push_str(&format!("[{time}] <{sp}> {msg}\n"));
                want.push((time, sp, msg));
            }
        }
        let d = parse_dialog_str(&text, "x");
        let got: Vec<_> = d.utterances.into_iter().map(|u| (u.time, u.speaker, u.text)).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn reads_file_and_date() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("2008-03-04.txt");
        std::fs::write(&p, EXAMPLE).unwrap();
        let d = parse_dialog_log(&p).unwrap();
        assert_eq!(d.date, "2008-03-04");
        assert!(parse_dialog_log(dir.path().join("nope.txt")).is_err());
    }

    fn dialog(lines: &[(&str, &str)]) -> Dialog {
        Dialog {
            date: "d".into(),
            utterances: lines
                .iter()
                .map(|(s, t)| Utterance {
                    time: "00:00".into(),
                    speaker: s.to_string(),
                    text: t.to_string(),
                })
                .collect(),
        }
    }

    fn filler(n: usize) -> Dialog {
        let lines: Vec<(String, String)> = (0..n)
            .map(|i| (format!("f{}", i % 3), format!("filler question number {i} here?")))
            .collect();
        let refs: Vec<(&str, &str)> = lines.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        dialog(&refs)
    }

    #[test]
    fn context_uses_min_of_sampled_and_available() {
        let d = dialog(&[
            ("ann", "what is apt one?"),
            ("bo", "a tool"),
            ("ann", "what is dpkg two?"),
            ("cy", "ann, lower level"),
            ("bo", "see man"),
            ("ann", "how about snap three?"),
            ("bo", "another format"),
            ("cy", "bo, why do you say four?"),
            ("ann", "ok what next five?"),
        ]);
        let opts = ConversationOptions {
            max_context: 6,
            ..Default::default()
        };
        let (groups, stats) = build_conversation_groups(&[d, filler(12)], &opts).unwrap();
        assert_eq!(stats.skipped_few_prior, 2 + 2);
        let g4 = groups.iter().find(|g| g.query_id == 3).unwrap();
        let used = g4.context_questions.unwrap();
        assert!((2..=3).contains(&used));
        // The context starts at the question `used` positions back.
        let expect = if used == 3 { "apt" } else { "dpkg" };
        assert_eq!(&g4.query.tokens()[..4], ["ann", "what", "is", expect]);
        assert!(g4.query.tokens().iter().any(|t| t == SEPARATOR_TOKEN));
        assert_eq!(g4.candidates.len(), 10);
        // Speaker names are removed from the positive.
        let pos = g4.positive().unwrap();
        assert_eq!(pos.tokens.tokens(), ["why", "do", "you", "say", "four"]);
    }

    #[test]
    fn context_size_three_covers_three_questions() {
        let d = dialog(&[
            ("a", "q one here?"),
            ("b", "r1"),
            ("a", "q two here?"),
            ("a", "q three here?"),
            ("b", "r3"),
            ("a", "q four here?"),
            ("a", "q five here?"),
        ]);
        let opts = ConversationOptions::default();
        for seed in 0..20 {
            let (groups, _) = build_conversation_groups(
                &[d.clone(), filler(12)],
                &ConversationOptions { seed, ..opts.clone() },
            )
            .unwrap();
            let g = groups.iter().find(|g| g.query_id == 3).unwrap();
            if g.context_questions == Some(3) {
                let text = g.query.join();
                assert_eq!(text, "a q one here __eou__ b r1 __eou__ a q two here __eou__ a q three here __eou__ b r3");
                return;
            }
        }
        panic!("no seed sampled a context of three");
    }

    #[test]
    fn short_questions_skipped() {
        let d = dialog(&[("a", "x y?"), ("a", "one two three?"), ("a", "ok then?"), ("a", "one more here?")]);
        let (groups, stats) = build_conversation_groups(&[d, filler(12)], &ConversationOptions::default()).unwrap();
        assert_eq!(stats.skipped_short, 1);
        assert!(groups.iter().all(|g| g.positive().unwrap().tokens.len() >= 3));
    }

    #[test]
    fn small_pool_skipped() {
        let (groups, stats) = build_conversation_groups(&[filler(5)], &ConversationOptions::default()).unwrap();
        assert!(groups.is_empty());
        assert_eq!(stats.skipped_small_pool, 3);
    }
}
