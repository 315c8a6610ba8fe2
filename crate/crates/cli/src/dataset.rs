use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use qmatch::classical::InvertedIndex;
use qmatch::data::synthetic::{dialogs, paraphrase_pairs, DialogConfig, ParaphraseConfig};
use qmatch::data::{
    build_conversation_groups, build_retrieval_groups, distinct_questions, load_groups, parse_dialog_log,
    parse_quora_tsv, question_index, save_groups, split, ConversationOptions, Dialog, Manifest, QueryGroup,
    RetrievalOptions, Task,
};
use qmatch::text::{remove_stopwords, SourceRole, Stoplist, TokenSequence};
use qmatch::DocId;

use crate::settings::{List, Settings};
use crate::BuildArgs;

pub const SPLITS: [&str; 3] = ["train", "dev", "test"];
const QUESTIONS: &str = "questions.tsv";
const MANIFEST: &str = "manifest.txt";

/// A dataset directory written by `build-dataset`.
pub struct DataDir {
    pub root: PathBuf,
    pub manifest: Manifest,
    pub task: Task,
}

impl DataDir {
    pub fn open(root: &Path) -> Result<Self> {
        if !root.is_dir() {
            bail!("dataset directory {} does not exist", root.display());
        }
        let manifest = Manifest::load(root.join(MANIFEST))?;
        let task = manifest
            .get("task")
            .context("dataset manifest lacks `task`")?
            .parse()?;
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
            task,
        })
    }

    pub fn groups(&self, split: &str) -> Result<Vec<QueryGroup>> {
        let path = self.root.join(format!("{split}.tsv"));
        Ok(load_groups(&path, self.task)?)
    }

    pub fn questions(&self) -> Result<Vec<(DocId, TokenSequence)>> {
        read_questions(&self.root.join(QUESTIONS))
    }

    /// Stopword-free index over every candidate text of the dataset.
    pub fn index(&self, stoplist: &Stoplist) -> Result<InvertedIndex> {
        let docs: Vec<(DocId, TokenSequence)> = self
            .questions()?
            .into_iter()
            .map(|(id, t)| (id, remove_stopwords(&t, stoplist)))
            .collect();
        Ok(InvertedIndex::build(docs.iter().map(|(id, t)| (*id, t)))?)
    }
}

fn write_questions(path: &Path, docs: &[(DocId, TokenSequence)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for (id, t) in docs {
        writeln!(w, "{id}\t{}", t.join())?;
    }
    w.flush()?;
    Ok(())
}

fn read_questions(path: &Path) -> Result<Vec<(DocId, TokenSequence)>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let (id, text) = line.split_once('\t').unwrap_or((line.as_str(), ""));
        let id: DocId = id
            .parse()
            .with_context(|| format!("{}:{}: bad document id", path.display(), i + 1))?;
        out.push((id, TokenSequence::from_whitespace(text, SourceRole::CandidateQuestion)));
    }
    Ok(out)
}

fn read_dialogs(input: &Path) -> Result<Vec<Dialog>> {
    if input.is_file() {
        return Ok(vec![parse_dialog_log(input)?]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(input)
        .with_context(|| format!("reading {}", input.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.is_file());
    files.sort();
    files.iter().map(|p| Ok(parse_dialog_log(p)?)).collect()
}

/// Distinct candidate texts over all groups, in first-seen order.
fn distinct_candidates(groups: &[QueryGroup]) -> Vec<(DocId, TokenSequence)> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for g in groups {
        for c in &g.candidates {
            if seen.insert(c.doc_id) {
                out.push((c.doc_id, c.tokens.clone()));
            }
        }
    }
    out
}

pub fn run(args: &BuildArgs) -> Result<()> {
    let mut s = Settings::new(args.config.as_deref())?;
    let task: Task = s.get("task", args.task, Task::Retrieval)?;
    let seed = s.get("seed", args.seed, 0u64)?;
    let ratios = s.get("split", args.split.clone(), List(vec![0.8, 0.1, 0.1]))?;
    let ratios: [f64; 3] = ratios
        .0
        .try_into()
        .map_err(|_| anyhow::anyhow!("--split needs exactly three ratios"))?;
    let input = s.get_opt::<String>("input", args.input.as_ref().map(|p| p.display().to_string()))?;
    let synthetic = s.get_opt("synthetic", args.synthetic)?;
    let input = match (input, synthetic) {
        (Some(p), None) => {
            let p = PathBuf::from(p);
            if !p.exists() {
                bail!("input {} does not exist", p.display());
            }
            Some(p)
        }
        (None, Some(_)) => None,
        _ => bail!("pass exactly one of --input or --synthetic"),
    };

    let mut m = Manifest::new();
    let (groups, questions) = match task {
        Task::Retrieval => {
            let opts = RetrievalOptions {
                n_neg: s.get("n_neg", args.n_neg, 4)?,
                depth: s.get("depth", args.depth, 1000)?,
                seed,
                ..RetrievalOptions::default()
            };
            let pairs = match (&input, synthetic) {
                (Some(p), _) => {
                    let parsed = parse_quora_tsv(p)?;
                    m.set("input.rows_bad_label", parsed.bad_label);
                    m.set("input.rows_malformed", parsed.malformed);
                    parsed.pairs
                }
                (None, Some(n)) => paraphrase_pairs(&ParaphraseConfig {
                    n_pairs: n,
                    n_distractor_pairs: n / 2,
                    seed,
                    ..ParaphraseConfig::default()
                }),
                (None, None) => unreachable!(),
            };
            m.set("input.pairs", pairs.len());
            let index = Arc::new(question_index(&pairs, &opts)?);
            let (groups, stats) = build_retrieval_groups(&pairs, index, &opts)?;
            m.set("stats.positive_pairs", stats.positive_pairs);
            m.set("stats.dropped_no_hits", stats.dropped_no_hits);
            m.set("stats.short_groups", stats.short_groups);
            (groups, distinct_questions(&pairs, opts.tokenize))
        }
        Task::Conversation => {
            let opts = ConversationOptions {
                max_context: s.get("max_context", args.max_context, 6)?,
                n_neg: s.get("n_neg", args.n_neg, 9)?,
                min_question_len: s.get("min_question_len", args.min_question_len, 3)?,
                seed,
                ..ConversationOptions::default()
            };
            let logs = match (&input, synthetic) {
                (Some(p), _) => read_dialogs(p)?,
                (None, Some(n)) => dialogs(&DialogConfig {
                    n_dialogs: n,
                    seed,
                    ..DialogConfig::default()
                }),
                (None, None) => unreachable!(),
            };
            m.set("input.dialogs", logs.len());
            let (groups, stats) = build_conversation_groups(&logs, &opts)?;
            m.set("stats.questions", stats.questions);
            m.set("stats.skipped_few_prior", stats.skipped_few_prior);
            m.set("stats.skipped_short", stats.skipped_short);
            m.set("stats.skipped_small_pool", stats.skipped_small_pool);
            let questions = distinct_candidates(&groups);
            (groups, questions)
        }
    };
    if groups.is_empty() {
        bail!("no query groups could be built from the input");
    }

    let n_groups = groups.len();
    let (train, dev, test) = split(groups, ratios, seed)?;
    fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    for (name, part) in SPLITS.iter().zip([&train, &dev, &test]) {
        save_groups(args.out_dir.join(format!("{name}.tsv")), part)?;
        m.set(format!("groups.{name}"), part.len());
    }
    write_questions(&args.out_dir.join(QUESTIONS), &questions)?;

    let mut manifest = s.resolved;
    manifest.set("config_hash", manifest.config_hash());
    manifest.set("task", task);
    manifest.set("seed", seed);
    manifest.set("groups", n_groups);
    manifest.set("questions", questions.len());
    for (k, v) in m.entries() {
        manifest.set(k.clone(), v);
    }
    manifest.save(args.out_dir.join(MANIFEST))?;
    log::info!(
        "wrote {n_groups} {task} groups ({}/{}/{}) to {}",
        train.len(),
        dev.len(),
        test.len(),
        args.out_dir.display()
    );
    Ok(())
}
