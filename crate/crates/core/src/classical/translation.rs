use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::text::TokenSequence;
use crate::{Error, Result};

const ROW_SUM_TOLERANCE: f64 = 1e-6;

/// Sparse word-translation probabilities `P(target | source)`.
///
/// Every stored source row sums to one.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TranslationTable {
    rows: HashMap<String, HashMap<String, f64>>,
}

impl TranslationTable {
    /// Builds a table from `(target, source, prob)` triples and checks that
    /// each source row is a distribution.
    pub fn from_entries<I, S, T>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (T, S, f64)>,
        S: Into<String>,
        T: Into<String>,
    {
        let mut rows: HashMap<String, HashMap<String, f64>> = HashMap::new();
        for (target, source, p) in entries {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("translation probability {p} outside [0, 1]")));
            }
            rows.entry(source.into()).or_default().insert(target.into(), p);
        }
        let table = Self { rows };
        table.validate()?;
        Ok(table)
    }

    /// `P(w | t) = 1[w = t]` over `words`.
    pub fn identity<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let rows = words
            .into_iter()
            .map(|w| {
                let w = w.into();
                (w.clone(), HashMap::from([(w, 1.0)]))
            })
            .collect();
        Self { rows }
    }

    fn validate(&self) -> Result<()> {
        for (source, row) in &self.rows {
            let total = sorted_sum(row.values().copied());
            if (total - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::invalid(format!(
                    "translation row for `{source}` sums to {total}"
                )));
            }
        }
        Ok(())
    }

    pub fn prob(&self, target: &str, source: &str) -> f64 {
        self.rows
            .get(source)
            .and_then(|row| row.get(target))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn n_sources(&self) -> usize {
        self.rows.len()
    }

    pub fn len(&self) -> usize {
        self.rows.values().map(HashMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, source: &str) -> Option<&HashMap<String, f64>> {
        self.rows.get(source)
    }

    /// All `(target, source, prob)` entries ordered by source then target.
    pub fn entries(&self) -> Vec<(&str, &str, f64)> {
        let mut out: Vec<(&str, &str, f64)> = self
            .rows
            .iter()
            .flat_map(|(s, row)| row.iter().map(move |(t, &p)| (t.as_str(), s.as_str(), p)))
            .collect();
        out.sort_by(|a, b| (a.1, a.0).cmp(&(b.1, b.0)));
        out
    }

    /// One `target<TAB>source<TAB>prob` line per entry.
    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (t, s, p) in self.entries() {
            writeln!(w, "{t}\t{s}\t{p:?}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R, origin: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: &str| Error::Parse {
                path: origin.to_owned(),
                line: i + 1,
                msg: msg.to_owned(),
            };
            let mut parts = line.split('\t');
            let (Some(t), Some(s), Some(p), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
                return Err(bad("expected target<TAB>source<TAB>prob"));
            };
            let p: f64 = p.parse().map_err(|_| bad("bad probability"))?;
            entries.push((t.to_owned(), s.to_owned(), p));
        }
        Self::from_entries(entries)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(file), &path.display().to_string())
    }
}

fn sorted_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.into_iter().sum()
}

/// Result of EM training.
#[derive(Debug, Clone)]
pub struct TranslationTraining {
    pub table: TranslationTable,
    /// Corpus log-likelihood of the initial table followed by the table
    /// after each iteration (`iters + 1` values).
    pub log_likelihood: Vec<f64>,
}

struct Interner {
    ids: HashMap<String, u32>,
    words: Vec<String>,
}

impl Interner {
    fn new() -> Self {
        Self {
            ids: HashMap::new(),
            words: Vec::new(),
        }
    }

    fn intern(&mut self, w: &str) -> u32 {
        if let Some(&id) = self.ids.get(w) {
            return id;
        }
        let id = self.words.len() as u32;
        self.ids.insert(w.to_owned(), id);
        self.words.push(w.to_owned());
        id
    }
}

/// IBM Model 1 EM over `(source, target)` sequence pairs, without a NULL
/// source word. Starts from a uniform table over the target vocabulary.
pub fn train_translation_table(
    pairs: &[(TokenSequence, TokenSequence)],
    iters: usize,
) -> Result<TranslationTraining> {
    if pairs.is_empty() {
        return Err(Error::invalid("translation training needs at least one pair"));
    }
    if iters == 0 {
        return Err(Error::invalid("translation training needs iters >= 1"));
    }
    let mut src_words = Interner::new();
    let mut tgt_words = Interner::new();
    let corpus: Vec<(Vec<u32>, Vec<u32>)> = pairs
        .iter()
        .filter(|(s, t)| !s.is_empty() && !t.is_empty())
        .map(|(s, t)| {
            (
                s.iter().map(|w| src_words.intern(w)).collect(),
                t.iter().map(|w| tgt_words.intern(w)).collect(),
            )
        })
        .collect();
    if corpus.is_empty() {
        return Err(Error::invalid("every translation pair has an empty side"));
    }

    let uniform = 1.0 / tgt_words.words.len() as f64;
    let mut t: BTreeMap<(u32, u32), f64> = BTreeMap::new();
    for (src, tgt) in &corpus {
        for &e in src {
            for &f in tgt {
                t.insert((e, f), uniform);
            }
        }
    }

    let log_likelihood_of = |t: &BTreeMap<(u32, u32), f64>| -> f64 {
        corpus
            .iter()
            .map(|(src, tgt)| {
                let l = src.len() as f64;
                tgt.iter()
                    .map(|&f| (src.iter().map(|&e| t[&(e, f)]).sum::<f64>() / l).ln())
                    .sum::<f64>()
            })
            .sum()
    };

    let mut log_likelihood = Vec::with_capacity(iters + 1);
    log_likelihood.push(log_likelihood_of(&t));
    for _ in 0..iters {
        let mut counts: BTreeMap<(u32, u32), f64> = BTreeMap::new();
        for (src, tgt) in &corpus {
            for &f in tgt {
                let denom: f64 = src.iter().map(|&e| t[&(e, f)]).sum();
                for &e in src {
                    *counts.entry((e, f)).or_default() += t[&(e, f)] / denom;
                }
            }
        }
        let mut totals: BTreeMap<u32, f64> = BTreeMap::new();
        for (&(e, _), &c) in &counts {
            *totals.entry(e).or_default() += c;
        }
        for (key, c) in counts {
            t.insert(key, c / totals[&key.0]);
        }
        log_likelihood.push(log_likelihood_of(&t));
    }

    let table = TranslationTable::from_entries(t.into_iter().map(|((e, f), p)| {
        (
            tgt_words.words[f as usize].clone(),
            src_words.words[e as usize].clone(),
            p,
        )
    }))?;
    Ok(TranslationTraining {
        table,
        log_likelihood,
    })
}
