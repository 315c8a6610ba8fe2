use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::TokenSequence;
use crate::{Error, Result};

pub const UNK_TOKEN: &str = "<unk>";
const HEADER: &str = "#qmatch-vocab\tv1";

/// Vocabulary-id encoding of a [`TokenSequence`].
#[derive(Debug, Clone, PartialEq, Eq, Default, Hash)]
pub struct IdSequence(pub Vec<u32>);

impl IdSequence {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }
}

/// Dense token-id mapping. Id 0 is always the unknown token; remaining ids
/// are ordered by corpus frequency (descending), ties lexicographically.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
    counts: Vec<u64>,
}

/// Counts tokens across `corpus` and keeps those seen more than
/// `unk_threshold` times. Everything else encodes to the unknown id.
pub fn build_vocab<'a, I>(corpus: I, unk_threshold: u64) -> Vocab
where
    I: IntoIterator<Item = &'a TokenSequence>,
{
    let mut freq: HashMap<&'a str, u64> = HashMap::new();
    for seq in corpus {
        for tok in seq.iter() {
            *freq.entry(tok).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, u64)> = Vec::with_capacity(freq.len());
    let mut unk_count = 0;
    for (tok, n) in freq {
        if n > unk_threshold {
            kept.push((tok, n));
        } else {
            unk_count += n;
        }
    }
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let mut tokens = Vec::with_capacity(kept.len() + 1);
    let mut counts = Vec::with_capacity(kept.len() + 1);
    tokens.push(UNK_TOKEN.to_owned());
    counts.push(unk_count);
    for (tok, n) in kept {
        tokens.push(tok.to_owned());
        counts.push(n);
    }
    Vocab::from_parts(tokens, counts)
}

impl Vocab {
    fn from_parts(tokens: Vec<String>, counts: Vec<u64>) -> Self {
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self {
            tokens,
            ids,
            counts,
        }
    }

    pub const fn unk_id(&self) -> u32 {
        0
    }

    /// Number of ids, including the unknown token.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 1
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(0)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token) && token != UNK_TOKEN
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn count(&self, id: u32) -> Option<u64> {
        self.counts.get(id as usize).copied()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(String::as_str)
    }

    pub fn encode(&self, seq: &TokenSequence) -> IdSequence {
        IdSequence(seq.iter().map(|t| self.id(t)).collect())
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{HEADER}")?;
        for (i, (tok, n)) in self.tokens.iter().zip(&self.counts).enumerate() {
            writeln!(w, "{i}\t{tok}\t{n}")?;
        }
        Ok(())
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

    pub fn read<R: BufRead>(r: R, origin: &str) -> Result<Self> {
        let parse_err = |line: usize, msg: &str| Error::Parse {
            path: origin.to_owned(),
            line,
            msg: msg.to_owned(),
        };
        let mut lines = r.lines();
        match lines.next() {
            Some(Ok(h)) if h == HEADER => {}
            Some(Err(e)) => return Err(e.into()),
            _ => return Err(parse_err(1, "missing vocab header")),
        }
        let mut tokens = Vec::new();
        let mut counts = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            let lineno = i + 2;
            let mut parts = line.split('\t');
            let (Some(id), Some(tok), Some(n), None) =
                (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(parse_err(lineno, "expected id<TAB>token<TAB>count"));
            };
            let id: usize = id.parse().map_err(|_| parse_err(lineno, "bad id"))?;
            if id != tokens.len() {
                return Err(parse_err(lineno, "ids must be dense and ascending"));
            }
            let n: u64 = n.parse().map_err(|_| parse_err(lineno, "bad count"))?;
            tokens.push(tok.to_owned());
            counts.push(n);
        }
        if tokens.first().map(String::as_str) != Some(UNK_TOKEN) {
            return Err(parse_err(2, "id 0 must be the unknown token"));
        }
        Ok(Self::from_parts(tokens, counts))
    }
}
