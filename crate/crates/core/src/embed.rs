//! Pretrained word vectors with deterministic out-of-vocabulary draws, and
//! the averaged-embedding cosine baseline.

use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::{Arc, RwLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::classical::PairScorer;
use crate::text::{TokenSequence, Vocab};
use crate::{Error, Result};

/// Half-width of the uniform distribution used for unknown words.
pub const OOV_RANGE: f64 = 0.25;

pub type Vector = Arc<[f64]>;

#[derive(Debug)]
pub struct EmbedStore {
    dim: usize,
    vectors: HashMap<String, Vector>,
    oov_seed: u64,
    oov_cache: RwLock<HashMap<String, Vector>>,
}

impl EmbedStore {
    /// A store with no pretrained vectors; every lookup is an OOV draw.
    pub fn empty(dim: usize, oov_seed: u64) -> Self {
        Self {
            dim,
            vectors: HashMap::new(),
            oov_seed,
            oov_cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn from_vectors<I>(dim: usize, oov_seed: u64, vectors: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Vec<f64>)>,
    {
        let mut store = Self::empty(dim, oov_seed);
        for (tok, v) in vectors {
            if v.len() != dim {
                return Err(Error::invalid(format!(
                    "vector for `{tok}` has {} values, expected {dim}",
                    v.len()
                )));
            }
            store.vectors.insert(tok, v.into());
        }
        Ok(store)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of pretrained vectors.
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn oov_seed(&self) -> u64 {
        self.oov_seed
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vectors.contains_key(token)
    }

    /// The stored vector, or a cached draw from `U[-0.25, 0.25]^dim` keyed by
    /// `(oov_seed, token)`.
    pub fn lookup(&self, token: &str) -> Vector {
        if let Some(v) = self.vectors.get(token) {
            return v.clone();
        }
        if let Some(v) = self.oov_cache.read().expect("oov cache poisoned").get(token) {
            return v.clone();
        }
        let mut cache = self.oov_cache.write().expect("oov cache poisoned");
        cache
            .entry(token.to_owned())
            .or_insert_with(|| oov_vector(self.oov_seed, token, self.dim))
            .clone()
    }

    /// Row-major `vocab.len() x dim` matrix with one row per vocabulary id.
    pub fn matrix_for(&self, vocab: &Vocab) -> Vec<f64> {
        let mut out = Vec::with_capacity(vocab.len() * self.dim);
        for tok in vocab.tokens() {
            out.extend_from_slice(&self.lookup(tok));
        }
        out
    }
}

fn oov_vector(seed: u64, token: &str, dim: usize) -> Vector {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(token.as_bytes());
    let digest: [u8; 32] = h.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(digest);
    (0..dim)
        .map(|_| rng.gen_range(-OOV_RANGE..=OOV_RANGE))
        .collect()
}

/// Reads the whitespace-separated `token v1 .. vd` text format. A leading
/// `count dim` header line is skipped.
pub fn load_embeddings(path: impl AsRef<Path>, expected_dim: usize, oov_seed: u64) -> Result<EmbedStore> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_embeddings(BufReader::new(file), expected_dim, oov_seed, &path.display().to_string())
}

pub fn read_embeddings<R: BufRead>(r: R, expected_dim: usize, oov_seed: u64, origin: &str) -> Result<EmbedStore> {
    let mut store = EmbedStore::empty(expected_dim, oov_seed);
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else {
            continue;
        };
        let values: Vec<&str> = fields.collect();
        if lineno == 1 && values.len() == 1 && expected_dim != 1 && token.parse::<u64>().is_ok() {
            continue;
        }
        if values.len() != expected_dim {
            return Err(Error::Parse {
                path: origin.to_owned(),
                line: lineno,
                msg: format!("expected {expected_dim} values, found {}", values.len()),
            });
        }
        let v = values
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| Error::Parse {
                path: origin.to_owned(),
                line: lineno,
                msg: format!("bad number: {e}"),
            })?;
        store.vectors.insert(token.to_owned(), v.into());
    }
    Ok(store)
}

fn mean_vector(seq: &TokenSequence, store: &EmbedStore) -> Option<Vec<f64>> {
    if seq.is_empty() {
        return None;
    }
    let mut acc = vec![0.0; store.dim()];
    for tok in seq.iter() {
        for (a, x) in acc.iter_mut().zip(store.lookup(tok).iter()) {
            *a += x;
        }
    }
    let n = seq.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Some(acc)
}

/// Cosine of the two mean embedding vectors; 0 when either is empty or zero.
pub fn avg_embed_score(q: &TokenSequence, p: &TokenSequence, store: &EmbedStore) -> f64 {
    let (Some(a), Some(b)) = (mean_vector(q, store), mean_vector(p, store)) else {
        return 0.0;
    };
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

pub struct AvgEmbed {
    pub store: Arc<EmbedStore>,
}

impl PairScorer for AvgEmbed {
    fn name(&self) -> &str {
        "avg-embed"
    }

    fn score(&self, q: &TokenSequence, p: &TokenSequence) -> Result<f64> {
        Ok(avg_embed_score(q, p, &self.store))
    }
}
