use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use super::{compute_metrics, MetricsReport};
use crate::classical::{PairScorer, RankedList};
use crate::data::QueryGroup;
use crate::nn::{adam_step, AdamConfig, AdamState, Graph, ParamStore, Tensor};
use crate::{DocId, Error, QueryId, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub doc_id: DocId,
    pub label: bool,
    pub features: Vec<f64>,
}

/// Per-method scores for every candidate of one query.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGroup {
    pub query_id: QueryId,
    pub rows: Vec<FeatureRow>,
}

impl FeatureGroup {
    pub fn positive(&self) -> Option<DocId> {
        let mut it = self.rows.iter().filter(|r| r.label);
        match (it.next(), it.next()) {
            (Some(r), None) => Some(r.doc_id),
            _ => None,
        }
    }

    pub fn rank_by(&self, score: impl Fn(&[f64]) -> f64) -> RankedList {
        RankedList::from_scores(self.query_id, self.rows.iter().map(|r| (r.doc_id, score(&r.features))))
    }
}

/// Scores every candidate with every scorer, columns in scorer order.
pub fn feature_groups(groups: &[QueryGroup], scorers: &[&dyn PairScorer]) -> Result<Vec<FeatureGroup>> {
    groups
        .par_iter()
        .map(|g| {
            let cands: Vec<_> = g.candidates.iter().map(|c| &c.tokens).collect();
            let columns = scorers
                .iter()
                .map(|s| s.score_all(&g.query, &cands))
                .collect::<Result<Vec<_>>>()?;
            let rows = g
                .candidates
                .iter()
                .enumerate()
                .map(|(i, c)| FeatureRow {
                    doc_id: c.doc_id,
                    label: c.label,
                    features: columns.iter().map(|col| col[i]).collect(),
                })
                .collect();
            Ok(FeatureGroup {
                query_id: g.query_id,
                rows,
            })
        })
        .collect()
}

/// Metrics of a ranking function over feature groups.
pub fn evaluate_features(groups: &[FeatureGroup], score: impl Fn(&[f64]) -> f64 + Sync) -> Result<MetricsReport> {
    let ranked = groups
        .par_iter()
        .map(|g| {
            let pos = g
                .positive()
                .ok_or_else(|| Error::invalid(format!("query {} does not have exactly one positive", g.query_id)))?;
            Ok((g.rank_by(&score), pos))
        })
        .collect::<Result<Vec<_>>>()?;
    compute_metrics(&ranked)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CombinerConfig {
    pub epochs: usize,
    pub lr: f64,
    pub epsilon: f64,
    pub lambda: f64,
}

impl Default for CombinerConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            lr: 0.05,
            epsilon: 0.1,
            lambda: 1e-4,
        }
    }
}

/// Linear model over z-normalized method scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Combiner {
    pub methods: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Combiner {
    pub fn score(&self, features: &[f64]) -> f64 {
        features
            .iter()
            .enumerate()
            .map(|(j, x)| self.weights[j] * (x - self.mean[j]) / self.std[j])
            .sum()
    }

    /// Scores one candidate from named method scores.
    pub fn combine(&self, scores: &BTreeMap<String, f64>) -> Result<f64> {
        let row = self
            .methods
            .iter()
            .map(|m| scores.get(m).copied().ok_or_else(|| Error::MissingMethod(m.clone())))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.score(&row))
    }

    pub fn evaluate(&self, groups: &[FeatureGroup]) -> Result<MetricsReport> {
        evaluate_features(groups, |f| self.score(f))
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "method\tmean\tstd\tweight")?;
        for j in 0..self.methods.len() {
            writeln!(
                w,
                "{}\t{:?}\t{:?}\t{:?}",
                self.methods[j], self.mean[j], self.std[j], self.weights[j]
            )?;
        }
        w.flush()
    }

    pub fn read<R: BufRead>(r: R, origin: &str) -> Result<Self> {
        let mut c = Combiner {
            methods: vec![],
            mean: vec![],
            std: vec![],
            weights: vec![],
        };
        for (i, line) in r.lines().enumerate().skip(1) {
            let line = line?;
            let bad = || Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                msg: "expected method, mean, std, weight".into(),
            };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            c.methods.push(f[0].to_string());
            c.mean.push(num(f[1])?);
            c.std.push(num(f[2])?);
            c.weights.push(num(f[3])?);
        }
        Ok(c)
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

/// Fits feature statistics on `train`, then the weights by full-batch Adam
/// on the pairwise hinge loss over every (positive, negative) pair.
pub fn train_combiner(train: &[FeatureGroup], methods: Vec<String>, cfg: &CombinerConfig) -> Result<Combiner> {
    let m = methods.len();
    let rows: Vec<&FeatureRow> = train.iter().flat_map(|g| &g.rows).collect();
    if m == 0 || rows.is_empty() {
        return Err(Error::invalid("combiner needs at least one method and one candidate"));
    }
    if let Some(r) = rows.iter().find(|r| r.features.len() != m) {
        return Err(Error::invalid(format!(
            "candidate {} has {} scores for {m} methods",
            r.doc_id,
            r.features.len()
        )));
    }
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..m).map(|j| rows.iter().map(|r| r.features[j]).sum::<f64>() / n).collect();
    let std: Vec<f64> = (0..m)
        .map(|j| {
            let v = rows.iter().map(|r| (r.features[j] - mean[j]).powi(2)).sum::<f64>() / n;
            if v > 0.0 {
                v.sqrt()
            } else {
                1.0
            }
        })
        .collect();

    let mut diffs = Vec::new();
    for g in train {
        for p in g.rows.iter().filter(|r| r.label) {
            for q in g.rows.iter().filter(|r| !r.label) {
                diffs.push((0..m).map(|j| (p.features[j] - q.features[j]) / std[j]).collect::<Vec<_>>());
            }
        }
    }
    let mut combiner = Combiner {
        methods,
        mean,
        std,
        weights: vec![0.0; m],
    };
    if diffs.is_empty() {
        return Ok(combiner);
    }
    let d = Tensor::from_fn(m, diffs.len(), |j, k| diffs[k][j]);

    let mut store = ParamStore::new();
    let w = store.add("w", Tensor::zeros(vec![1, m]), true);
    let mut adam = AdamState::new(&store, AdamConfig::with_lr(cfg.lr));
    for _ in 0..cfg.epochs {
        let grads = {
            let mut g = Graph::new(&store);
            let wn = g.param(w);
            let dn = g.constant(d.clone());
            let s = g.matmul(wn, dn)?;
            let neg = g.scale(s, -1.0);
            let gap = g.shift(neg, cfg.epsilon);
            let hinge = g.relu(gap);
            let data = g.sum(hinge);
            let reg = g.l2_norm_sq(wn);
            let reg = g.scale(reg, cfg.lambda);
            let loss = g.add(data, reg)?;
            g.backward(loss)?
        };
        adam_step(&mut store, &grads, &mut adam);
    }
    combiner.weights = store.get(w).data().to_vec();
    Ok(combiner)
}
