use std::collections::{BTreeMap, HashMap};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::text::{smoothed_idf, SourceRole, TokenSequence};
use crate::{DocId, Error, Result};

/// Dense position of a document inside an [`InvertedIndex`], in ascending
/// [`DocId`] order.
pub type DocIdx = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub doc: DocIdx,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq)]
struct TermEntry {
    collection_tf: u64,
    postings: Vec<Posting>,
}

/// Term -> postings index with the collection statistics needed by the
/// lexical scorers. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InvertedIndex {
    doc_ids: Vec<DocId>,
    doc_len: Vec<u32>,
    positions: HashMap<DocId, DocIdx>,
    terms: Vec<String>,
    term_ids: HashMap<String, u32>,
    entries: Vec<TermEntry>,
    // Forward index: (term id, tf) per document, sorted by term id.
    doc_terms: Vec<Vec<(u32, u32)>>,
    collection_len: u64,
}

const MAGIC: &[u8; 8] = b"QMIDX\0\0\0";
const VERSION: u32 = 1;

impl InvertedIndex {
    /// Indexes `corpus`. Rejects duplicate document ids.
    pub fn build<'a, I>(corpus: I) -> Result<Self>
    where
        I: IntoIterator<Item = (DocId, &'a TokenSequence)>,
    {
        let mut docs: BTreeMap<DocId, &TokenSequence> = BTreeMap::new();
        for (id, seq) in corpus {
            if docs.insert(id, seq).is_some() {
                return Err(Error::DuplicateDoc(id));
            }
        }
        let mut term_tf: BTreeMap<&str, Vec<Posting>> = BTreeMap::new();
        let mut doc_ids = Vec::with_capacity(docs.len());
        let mut doc_len = Vec::with_capacity(docs.len());
        for (idx, (id, seq)) in docs.iter().enumerate() {
            doc_ids.push(*id);
            doc_len.push(seq.len() as u32);
            let mut counts: BTreeMap<&str, u32> = BTreeMap::new();
            for t in seq.iter() {
                *counts.entry(t).or_default() += 1;
            }
            for (t, tf) in counts {
                term_tf.entry(t).or_default().push(Posting {
                    doc: idx as DocIdx,
                    tf,
                });
            }
        }
        let terms: Vec<String> = term_tf.keys().map(|t| t.to_string()).collect();
        let entries = term_tf
            .into_values()
            .map(|postings| TermEntry {
                collection_tf: postings.iter().map(|p| p.tf as u64).sum(),
                postings,
            })
            .collect();
        Ok(Self::assemble(doc_ids, doc_len, terms, entries))
    }

    fn assemble(
        doc_ids: Vec<DocId>,
        doc_len: Vec<u32>,
        terms: Vec<String>,
        entries: Vec<TermEntry>,
    ) -> Self {
        let positions = doc_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (*id, i as DocIdx))
            .collect();
        let term_ids = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        let mut doc_terms = vec![Vec::new(); doc_ids.len()];
        for (tid, e) in entries.iter().enumerate() {
            for p in &e.postings {
                doc_terms[p.doc as usize].push((tid as u32, p.tf));
            }
        }
        let collection_len = doc_len.iter().map(|&l| l as u64).sum();
        Self {
            doc_ids,
            doc_len,
            positions,
            terms,
            term_ids,
            entries,
            doc_terms,
            collection_len,
        }
    }

    pub fn n_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn collection_len(&self) -> u64 {
        self.collection_len
    }

    pub fn avg_doc_len(&self) -> f64 {
        if self.doc_ids.is_empty() {
            0.0
        } else {
            self.collection_len as f64 / self.doc_ids.len() as f64
        }
    }

    pub fn doc_id(&self, doc: DocIdx) -> DocId {
        self.doc_ids[doc as usize]
    }

    pub fn doc_ids(&self) -> &[DocId] {
        &self.doc_ids
    }

    pub fn position(&self, id: DocId) -> Option<DocIdx> {
        self.positions.get(&id).copied()
    }

    pub fn doc_len(&self, doc: DocIdx) -> u32 {
        self.doc_len[doc as usize]
    }

    fn entry(&self, term: &str) -> Option<&TermEntry> {
        self.term_ids.get(term).map(|&i| &self.entries[i as usize])
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.entry(term).map_or(&[], |e| &e.postings)
    }

    pub fn df(&self, term: &str) -> u64 {
        self.postings(term).len() as u64
    }

    pub fn collection_tf(&self, term: &str) -> u64 {
        self.entry(term).map_or(0, |e| e.collection_tf)
    }

    /// `collection_tf / collection_len`, or 0 for an empty collection.
    pub fn collection_prob(&self, term: &str) -> f64 {
        if self.collection_len == 0 {
            0.0
        } else {
            self.collection_tf(term) as f64 / self.collection_len as f64
        }
    }

    pub fn tf(&self, term: &str, doc: DocIdx) -> u32 {
        let Some(&tid) = self.term_ids.get(term) else {
            return 0;
        };
        let row = &self.doc_terms[doc as usize];
        row.binary_search_by_key(&tid, |&(t, _)| t)
            .map_or(0, |i| row[i].1)
    }

    /// Smoothed IDF used by the overlap features and VSM.
    pub fn idf(&self, term: &str) -> f64 {
        smoothed_idf(self.n_docs() as u64, self.df(term))
    }

    /// BM25 (Lucene-style, non-negative) IDF.
    pub fn bm25_idf(&self, term: &str) -> f64 {
        let n = self.n_docs() as f64;
        let df = self.df(term) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    /// The document as a bag of tokens, in term order.
    pub fn doc_tokens(&self, doc: DocIdx) -> TokenSequence {
        let tokens = self.doc_terms[doc as usize].iter().flat_map(|&(t, tf)| {
            std::iter::repeat_n(self.terms[t as usize].as_str(), tf as usize)
        });
        TokenSequence::new(tokens, SourceRole::CandidateQuestion)
    }

    /// Documents sharing at least one term with `q`, ascending.
    pub fn matching_docs(&self, q: &TokenSequence) -> Vec<DocIdx> {
        let mut hit = vec![false; self.n_docs()];
        for t in q.iter() {
            for p in self.postings(t) {
                hit[p.doc as usize] = true;
            }
        }
        hit.iter()
            .enumerate()
            .filter(|(_, &h)| h)
            .map(|(i, _)| i as DocIdx)
            .collect()
    }

    /// Writes the versioned binary layout:
    ///
    /// ```text
    /// magic "QMIDX\0\0\0" | version u32
    /// n_docs u64 | (doc_id u64, doc_len u32) * n_docs
    /// n_terms u64 | per term, ascending:
    ///     byte_len u32, utf8 bytes, collection_tf u64,
    ///     n_postings u32, (doc_idx u32, tf u32) * n_postings
    /// ```
    ///
    /// All integers little-endian.
    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u64::<LittleEndian>(self.doc_ids.len() as u64)?;
        for (id, len) in self.doc_ids.iter().zip(&self.doc_len) {
            w.write_u64::<LittleEndian>(*id)?;
            w.write_u32::<LittleEndian>(*len)?;
        }
        w.write_u64::<LittleEndian>(self.terms.len() as u64)?;
        for (term, e) in self.terms.iter().zip(&self.entries) {
            w.write_u32::<LittleEndian>(term.len() as u32)?;
            w.write_all(term.as_bytes())?;
            w.write_u64::<LittleEndian>(e.collection_tf)?;
            w.write_u32::<LittleEndian>(e.postings.len() as u32)?;
            for p in &e.postings {
                w.write_u32::<LittleEndian>(p.doc)?;
                w.write_u32::<LittleEndian>(p.tf)?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not an index file".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported index version {version}")));
        }
        let n_docs = r.read_u64::<LittleEndian>()? as usize;
        let mut doc_ids = Vec::with_capacity(n_docs.min(1 << 20));
        let mut doc_len = Vec::with_capacity(n_docs.min(1 << 20));
        for _ in 0..n_docs {
            let id = r.read_u64::<LittleEndian>()?;
            if doc_ids.last().is_some_and(|&prev| prev >= id) {
                return Err(Error::Format("doc ids not strictly ascending".into()));
            }
            doc_ids.push(id);
            doc_len.push(r.read_u32::<LittleEndian>()?);
        }
        let n_terms = r.read_u64::<LittleEndian>()? as usize;
        let mut terms = Vec::with_capacity(n_terms.min(1 << 20));
        let mut entries = Vec::with_capacity(n_terms.min(1 << 20));
        for _ in 0..n_terms {
            let len = r.read_u32::<LittleEndian>()? as usize;
            let mut bytes = vec![0u8; len];
            r.read_exact(&mut bytes)?;
            let term = String::from_utf8(bytes)
                .map_err(|_| Error::Format("term is not utf-8".into()))?;
            let collection_tf = r.read_u64::<LittleEndian>()?;
            let n_post = r.read_u32::<LittleEndian>()? as usize;
            let mut postings = Vec::with_capacity(n_post.min(n_docs));
            for _ in 0..n_post {
                let doc = r.read_u32::<LittleEndian>()?;
                let tf = r.read_u32::<LittleEndian>()?;
                if doc as usize >= n_docs {
                    return Err(Error::Format(format!("posting for unknown doc {doc}")));
                }
                postings.push(Posting { doc, tf });
            }
            terms.push(term);
            entries.push(TermEntry {
                collection_tf,
                postings,
            });
        }
        let index = Self::assemble(doc_ids, doc_len, terms, entries);
        let total: u64 = index.entries.iter().map(|e| e.collection_tf).sum();
        if total != index.collection_len {
            return Err(Error::Format("term counts disagree with document lengths".into()));
        }
        Ok(index)
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
        Self::read(BufReader::new(file))
    }
}
