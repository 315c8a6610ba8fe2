use std::collections::HashMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::PreparedGroup;
use crate::model::MatchModel;
use crate::nn::{Gradients, Graph, NodeId};
use crate::text::{IdSequence, OverlapFeatures};
use crate::{DocId, Error, QueryId, Result};

/// One side of a training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TripleSide {
    pub doc_id: DocId,
    pub ids: IdSequence,
    pub feats: OverlapFeatures,
}

/// A query with one positive and one negative candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTriple {
    pub query_id: QueryId,
    pub query: Arc<IdSequence>,
    pub pos: TripleSide,
    pub neg: TripleSide,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub epsilon: f64,
    pub lambda: f64,
}

impl LossConfig {
    pub fn retrieval() -> Self {
        Self {
            epsilon: 0.5,
            lambda: 1e-4,
        }
    }

    pub fn conversation() -> Self {
        Self {
            epsilon: 0.3,
            lambda: 1e-4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid(format!("margin must be positive, got {}", self.epsilon)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        Ok(())
    }
}

/// One triple per (positive, negative) pair, shuffled by `seed`.
///
/// Groups without exactly one positive are skipped, as are negatives whose
/// ids equal the positive's.
pub fn make_triples(groups: &[PreparedGroup], seed: u64) -> Vec<TrainingTriple> {
    let (mut no_pos, mut same) = (0usize, 0usize);
    let mut out = Vec::new();
    for g in groups {
        let Some(pos) = g.positive() else {
            no_pos += 1;
            continue;
        };
        let query = Arc::new(g.query.clone());
        let side = |c: &super::PreparedCandidate| TripleSide {
            doc_id: c.doc_id,
            ids: c.ids.clone(),
            feats: c.feats,
        };
        for neg in g.candidates.iter().filter(|c| !c.label) {
            if neg.ids == pos.ids {
                same += 1;
                continue;
            }
            out.push(TrainingTriple {
                query_id: g.query_id,
                query: Arc::clone(&query),
                pos: side(pos),
                neg: side(neg),
            });
        }
    }
    if no_pos > 0 {
        log::warn!("skipped {no_pos} groups without exactly one positive");
    }
    if same > 0 {
        log::warn!("skipped {same} negatives identical to their positive");
    }
    out.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    out
}

/// Data term of the loss for the triples of one query, sharing the query
/// encoding and each distinct candidate encoding.
fn bucket_loss(g: &mut Graph, model: &MatchModel, triples: &[&TrainingTriple], eps: f64) -> Result<NodeId> {
    let vq = model.encode_query(g, &triples[0].query)?;
    let mut cache: HashMap<DocId, NodeId> = HashMap::new();
    let mut score = |g: &mut Graph, s: &TripleSide| -> Result<NodeId> {
        if let Some(&n) = cache.get(&s.doc_id) {
            return Ok(n);
        }
        let n = model.score_node(g, vq, &s.ids, s.feats)?;
        cache.insert(s.doc_id, n);
        Ok(n)
    };
    let mut terms = Vec::with_capacity(triples.len());
    for t in triples {
        let sp = score(g, &t.pos)?;
        let sn = score(g, &t.neg)?;
        let d = g.sub(sn, sp)?;
        let d = g.shift(d, eps);
        terms.push(g.relu(d));
    }
    let all = g.concat(&terms, 0)?;
    Ok(g.sum(all))
}

/// Triples of a batch grouped by query, in order of first appearance.
fn buckets<'a>(batch: &[&'a TrainingTriple]) -> Vec<Vec<&'a TrainingTriple>> {
    let mut index: HashMap<(QueryId, *const IdSequence), usize> = HashMap::new();
    let mut out: Vec<Vec<&TrainingTriple>> = Vec::new();
    for t in batch {
        let key = (t.query_id, Arc::as_ptr(&t.query));
        let i = *index.entry(key).or_insert_with(|| {
            out.push(Vec::new());
            out.len() - 1
        });
        out[i].push(t);
    }
    out
}

fn regularization(model: &MatchModel) -> f64 {
    model
        .params()
        .iter()
        .filter(|(_, p)| p.regularized && p.value.requires_grad())
        .map(|(_, p)| p.value.sq_norm())
        .sum()
}

/// Builds the batch loss `sum relu(eps - S+ + S-) + lambda * |theta|^2` in
/// one graph, where theta covers the regularized trainable parameters.
pub fn hinge_loss(g: &mut Graph, model: &MatchModel, batch: &[&TrainingTriple], cfg: &LossConfig) -> Result<NodeId> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let mut parts = Vec::new();
    for b in buckets(batch) {
        parts.push(bucket_loss(g, model, &b, cfg.epsilon)?);
    }
    for (id, p) in model.params().iter() {
        if p.regularized && p.value.requires_grad() {
            let n = g.param(id);
            let sq = g.l2_norm_sq(n);
            parts.push(g.scale(sq, cfg.lambda));
        }
    }
    let all = g.concat(&parts, 0)?;
    Ok(g.sum(all))
}

/// Batch loss value and gradients. Each query gets its own graph so memory
/// stays bounded by the largest group; the L2 term is added analytically.
pub fn loss_and_gradients(
    model: &MatchModel,
    batch: &[&TrainingTriple],
    cfg: &LossConfig,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let mut total = 0.0;
    let mut grads = Gradients::default();
    for b in buckets(batch) {
        let mut g = Graph::new(model.params());
        let loss = bucket_loss(&mut g, model, &b, cfg.epsilon)?;
        total += g.scalar(loss);
        grads.accumulate(&g.backward(loss)?);
    }
    if cfg.lambda > 0.0 {
        total += cfg.lambda * regularization(model);
        for (id, p) in model.params().iter() {
            if p.regularized && p.value.requires_grad() {
                grads.add_scaled(id, p.value.data(), 2.0 * cfg.lambda);
            }
        }
    }
    Ok((total, grads))
}

/// Loss value only.
pub fn batch_loss(model: &MatchModel, batch: &[&TrainingTriple], cfg: &LossConfig) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let mut total = cfg.lambda * regularization(model);
    for b in buckets(batch) {
        let mut g = Graph::new(model.params());
        let loss = bucket_loss(&mut g, model, &b, cfg.epsilon)?;
        total += g.scalar(loss);
    }
    Ok(total)
}
