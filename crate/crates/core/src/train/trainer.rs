use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{loss_and_gradients, LossConfig, PreparedGroup, TrainingTriple};
use crate::classical::RankedList;
use crate::eval::{compute_metrics, MetricsReport};
use crate::model::MatchModel;
use crate::nn::{adam_step, AdamConfig, AdamState};
use crate::text::{IdSequence, OverlapFeatures};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Optimizer steps between dev evaluations.
    pub eval_every: usize,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
}

impl TrainConfig {
    pub fn retrieval() -> Self {
        Self {
            lr: 0.002,
            batch_size: 500,
            epochs: 10,
            seed: 42,
            eval_every: 100,
            patience: 5,
        }
    }

    pub fn conversation() -> Self {
        Self {
            batch_size: 200,
            ..Self::retrieval()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be non-negative, got {}", self.lr)));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("eval_every", self.eval_every),
            ("patience", self.patience),
        ] {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub step: usize,
    /// Mean per-triple loss over the steps since the previous row.
    pub train_loss: f64,
    pub dev_mrr: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the best dev MRR, or the final ones without a dev set.
    pub model: MatchModel,
    pub history: Vec<HistoryRow>,
    pub best_step: usize,
    pub best_dev_mrr: Option<f64>,
    pub initial_dev_mrr: Option<f64>,
    pub steps: usize,
}

/// Ranks every dev group with the model.
pub fn dev_metrics(model: &MatchModel, groups: &[PreparedGroup]) -> Result<MetricsReport> {
    let ranked = groups
        .par_iter()
        .map(|g| {
            let cands: Vec<(&IdSequence, OverlapFeatures)> = g.candidates.iter().map(|c| (&c.ids, c.feats)).collect();
            let scores = model.score_candidates(&g.query, &cands)?;
            let pos = g
                .positive()
                .ok_or_else(|| Error::invalid(format!("query {} does not have exactly one positive", g.query_id)))?;
            let list = RankedList::from_scores(g.query_id, g.candidates.iter().map(|c| c.doc_id).zip(scores));
            Ok((list, pos.doc_id))
        })
        .collect::<Result<Vec<_>>>()?;
    compute_metrics(&ranked)
}

struct Selection {
    best: Option<(usize, f64, MatchModel)>,
    initial: Option<f64>,
    stale: usize,
    patience: usize,
}

impl Selection {
    fn outcome(self, model: MatchModel, history: Vec<HistoryRow>, steps: usize) -> TrainOutcome {
        match self.best {
            Some((step, mrr, best)) => TrainOutcome {
                model: best,
                history,
                best_step: step,
                best_dev_mrr: Some(mrr),
                initial_dev_mrr: self.initial,
                steps,
            },
            None => TrainOutcome {
                model,
                history,
                best_step: steps,
                best_dev_mrr: None,
                initial_dev_mrr: self.initial,
                steps,
            },
        }
    }
}

/// Mini-batch Adam on the pairwise hinge loss with dev-set model selection
/// and early stopping. Batches are reshuffled every epoch from `cfg.seed`.
///
/// A non-finite loss aborts with [`Error::Diverged`], carrying the best
/// model seen so far.
pub fn train(
    mut model: MatchModel,
    triples: &[TrainingTriple],
    dev: &[PreparedGroup],
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    loss_cfg.validate()?;
    if triples.is_empty() {
        return Err(Error::invalid("no training triples"));
    }
    let mut adam = AdamState::new(model.params(), AdamConfig::with_lr(cfg.lr));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sel = Selection {
        best: None,
        initial: None,
        stale: 0,
        patience: cfg.patience,
    };
    if !dev.is_empty() {
        let mrr = dev_metrics(&model, dev)?.mrr;
        sel.initial = Some(mrr);
        sel.best = Some((0, mrr, model.clone()));
    }

    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..triples.len()).collect();
    let (mut step, mut window_loss, mut window_n) = (0usize, 0.0, 0usize);
    'epochs: for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&TrainingTriple> = chunk.iter().map(|&i| &triples[i]).collect();
            let (loss, grads) = loss_and_gradients(&model, &batch, loss_cfg)?;
            if !loss.is_finite() || !grads.sq_norm().is_finite() {
                let last_good = sel.outcome(model, history, step);
                return Err(Error::Diverged {
                    step: step + 1,
                    last_good: Box::new(last_good),
                });
            }
            adam_step(model.params_mut(), &grads, &mut adam);
            step += 1;
            window_loss += loss;
            window_n += batch.len();

            if step % cfg.eval_every == 0 {
                let stop = record(&model, dev, &mut sel, &mut history, step, window_loss / window_n as f64)?;
                window_loss = 0.0;
                window_n = 0;
                if stop {
                    log::info!("early stop at step {step} (epoch {epoch})");
                    break 'epochs;
                }
            }
        }
        log::debug!("epoch {epoch} done at step {step}");
    }
    if window_n > 0 {
        record(&model, dev, &mut sel, &mut history, step, window_loss / window_n as f64)?;
    }
    Ok(sel.outcome(model, history, step))
}

fn record(
    model: &MatchModel,
    dev: &[PreparedGroup],
    sel: &mut Selection,
    history: &mut Vec<HistoryRow>,
    step: usize,
    train_loss: f64,
) -> Result<bool> {
    let dev_mrr = if dev.is_empty() {
        None
    } else {
        Some(dev_metrics(model, dev)?.mrr)
    };
    history.push(HistoryRow {
        step,
        train_loss,
        dev_mrr,
    });
    log::info!("step {step} train_loss {train_loss:.6} dev_mrr {dev_mrr:?}");
    let Some(mrr) = dev_mrr else {
        return Ok(false);
    };
    match &sel.best {
        Some((_, best, _)) if mrr <= *best => {
            sel.stale += 1;
            Ok(sel.stale >= sel.patience)
        }
        _ => {
            sel.best = Some((step, mrr, model.clone()));
            sel.stale = 0;
            Ok(false)
        }
    }
}

/// `step,train_loss,dev_mrr`; the last column is empty without a dev set.
pub fn write_history<W: Write>(mut w: W, history: &[HistoryRow]) -> std::io::Result<()> {
    writeln!(w, "step,train_loss,dev_mrr")?;
    for r in history {
        match r.dev_mrr {
            Some(m) => writeln!(w, "{},{:.6},{:.6}", r.step, r.train_loss, m)?,
            None => writeln!(w, "{},{:.6},", r.step, r.train_loss)?,
        }
    }
    w.flush()
}

pub fn save_history(path: impl AsRef<Path>, history: &[HistoryRow]) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_history(BufWriter::new(f), history).map_err(|e| Error::io(path, e))
}
