use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{Candidate, QueryGroup, Task};
use crate::text::{SourceRole, TokenSequence};
use crate::{Error, Result};

/// Writes one line per candidate:
/// `query_id, label, candidate_id, query_text, candidate_text`, tab-separated,
/// texts as space-joined tokens.
pub fn write_groups<W: Write>(mut w: W, groups: &[QueryGroup]) -> std::io::Result<()> {
    for g in groups {
        let q = g.query.join();
        for c in &g.candidates {
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}",
                g.query_id,
                u8::from(c.label),
                c.doc_id,
                q,
                c.tokens.join()
            )?;
        }
    }
    w.flush()
}

/// Reads the format of [`write_groups`]. Consecutive lines sharing a query id
/// form one group.
pub fn read_groups<R: BufRead>(r: R, task: Task, origin: &str) -> Result<Vec<QueryGroup>> {
    let query_role = match task {
        Task::Retrieval => SourceRole::QueryQuestion,
        Task::Conversation => SourceRole::Context,
    };
    let mut groups: Vec<QueryGroup> = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            path: origin.to_string(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        if line.is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::Parse {
            path: origin.to_string(),
            line: i + 1,
            msg: msg.to_string(),
        };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(bad("expected 5 tab-separated fields"));
        }
        let qid: u64 = f[0].parse().map_err(|_| bad("bad query id"))?;
        let label = match f[1] {
            "0" => false,
            "1" => true,
            _ => return Err(bad("label must be 0 or 1")),
        };
        let doc_id: u64 = f[2].parse().map_err(|_| bad("bad candidate id"))?;
        let cand = Candidate {
            doc_id,
            tokens: TokenSequence::from_whitespace(f[4], SourceRole::CandidateQuestion),
            label,
        };
        match groups.last_mut() {
            Some(g) if g.query_id == qid => g.candidates.push(cand),
            _ => groups.push(QueryGroup {
                query_id: qid,
                query: TokenSequence::from_whitespace(f[3], query_role),
                candidates: vec![cand],
                task,
                context_questions: None,
            }),
        }
    }
    Ok(groups)
}

pub fn save_groups(path: impl AsRef<Path>, groups: &[QueryGroup]) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_groups(BufWriter::new(f), groups).map_err(|e| Error::io(path, e))
}

pub fn load_groups(path: impl AsRef<Path>, task: Task) -> Result<Vec<QueryGroup>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_groups(BufReader::new(f), task, &path.display().to_string())
}

/// Ordered `key=value` record describing how an output was produced.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets `key`, replacing an earlier value in place.
    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) -> &mut Self {
        let key = key.into();
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key, value)),
        }
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    /// SHA-256 over the `config.*` entries, in order.
    pub fn config_hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.entries.iter().filter(|(k, _)| k.starts_with("config.")) {
            h.update(format!("{k}={v}\n").as_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (k, v) in &self.entries {
            writeln!(w, "{k}={v}")?;
        }
        w.flush()
    }

    pub fn read<R: BufRead>(r: R, origin: &str) -> Result<Self> {
        let mut m = Manifest::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                msg: "expected key=value".into(),
            })?;
            m.set(k.trim(), v.trim());
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write(BufWriter::new(f)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(f), &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(s: &str) -> TokenSequence {
        TokenSequence::from_whitespace(s, SourceRole::CandidateQuestion)
    }

    fn group(id: u64, q: &str, cands: &[(u64, &str, bool)]) -> QueryGroup {
        QueryGroup {
            query_id: id,
            query: TokenSequence::from_whitespace(q, SourceRole::QueryQuestion),
            candidates: cands
                .iter()
                .map(|&(d, t, l)| Candidate {
                    doc_id: d,
                    tokens: seq(t),
                    label: l,
                })
                .collect(),
            task: Task::Retrieval,
            context_questions: None,
        }
    }

    #[test]
    fn round_trip() {
        let groups = vec![
            group(4, "how do i x", &[(1, "a b", true), (2, "c", false)]),
            group(9, "why y", &[(3, "d e f", true)]),
        ];
        let mut buf = Vec::new();
        write_groups(&mut buf, &groups).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "4\t1\t1\thow do i x\ta b\n4\t0\t2\thow do i x\tc\n9\t1\t3\twhy y\td e f\n"
        );
        assert_eq!(read_groups(&buf[..], Task::Retrieval, "t").unwrap(), groups);
    }

    #[test]
    fn malformed_line_names_position() {
        let err = read_groups(&b"1\t1\t2\tq\tc\n1\t5\t3\tq\tc\n"[..], Task::Retrieval, "f.tsv").unwrap_err();
        assert!(err.to_string().starts_with("f.tsv:2:"), "{err}");
        assert!(read_groups(&b"1\t1\t2\n"[..], Task::Retrieval, "f").is_err());
    }

    #[test]
    fn manifest_round_trip_and_hash() {
        let mut m = Manifest::new();
        m.set("seed", 7).set("config.n_neg", 4).set("count.groups", 10);
        m.set("seed", 8);
        let mut buf = Vec::new();
        m.write(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "seed=8\nconfig.n_neg=4\ncount.groups=10\n");
        let back = Manifest::read(&buf[..], "m").unwrap();
        assert_eq!(back, m);
        let h = m.config_hash();
        assert_eq!(h.len(), 64);
        m.set("count.groups", 11);
        assert_eq!(m.config_hash(), h);
        m.set("config.n_neg", 5);
        assert_ne!(m.config_hash(), h);
    }
}
