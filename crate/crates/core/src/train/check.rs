use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{hinge_loss, LossConfig, TrainingTriple, TripleSide};
use crate::model::{MatchModel, ModelConfig, Variant};
use crate::nn::{grad_check, GradCheckConfig, GradCheckReport};
use crate::text::{IdSequence, OverlapFeatures};
use crate::Result;

const TOY_VOCAB: usize = 20;
const KINK: f64 = 1e-3;

/// Finite-difference check of the hinge loss gradient over `triples`.
pub fn check_loss_gradients(
    model: &mut MatchModel,
    triples: &[TrainingTriple],
    loss_cfg: &LossConfig,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let shape = model.clone();
    grad_check(model.params_mut(), cfg, |g| {
        let batch: Vec<&TrainingTriple> = triples.iter().collect();
        hinge_loss(g, &shape, &batch, loss_cfg)
    })
}

fn random_ids(rng: &mut ChaCha8Rng, len: usize) -> IdSequence {
    IdSequence((0..len).map(|_| rng.gen_range(0..TOY_VOCAB as u32)).collect())
}

/// Toy-dimension model and two random triples of length-`len` sequences,
/// redrawn until every hinge is at least `1e-3` away from its kink.
pub fn toy_problem(variant: Variant, len: usize, seed: u64) -> Result<(MatchModel, Vec<TrainingTriple>)> {
    let mut cfg = ModelConfig::toy(TOY_VOCAB);
    cfg.variant = variant;
    let model = MatchModel::new(cfg, seed)?;
    let loss = LossConfig::retrieval();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    loop {
        let triples: Vec<TrainingTriple> = (0..2u64)
            .map(|k| {
                let query = Arc::new(random_ids(&mut rng, len));
                let side = |doc_id, ids: IdSequence, rng: &mut ChaCha8Rng| TripleSide {
                    doc_id,
                    ids,
                    feats: OverlapFeatures {
                        count: rng.gen_range(0..4),
                        idf_weighted: rng.gen_range(0.0..5.0),
                    },
                };
                let (p, n) = (random_ids(&mut rng, len), random_ids(&mut rng, len));
                TrainingTriple {
                    query_id: k,
                    query,
                    pos: side(2 * k, p, &mut rng),
                    neg: side(2 * k + 1, n, &mut rng),
                }
            })
            .collect();
        let clear = triples.iter().try_fold(true, |ok, t| -> Result<bool> {
            let sp = model.score_pair(&t.query, &t.pos.ids, t.pos.feats)?;
            let sn = model.score_pair(&t.query, &t.neg.ids, t.neg.feats)?;
            Ok(ok && (loss.epsilon - sp + sn).abs() > KINK)
        })?;
        if clear {
            return Ok((model, triples));
        }
    }
}

/// Gradient check of the full loss on a toy model with `T = 7`.
pub fn toy_grad_check(variant: Variant, seed: u64) -> Result<GradCheckReport> {
    let (mut model, triples) = toy_problem(variant, 7, seed)?;
    let loss = LossConfig {
        lambda: 0.01,
        ..LossConfig::retrieval()
    };
    let cfg = GradCheckConfig {
        seed,
        ..GradCheckConfig::default()
    };
    check_loss_gradients(&mut model, &triples, &loss, &cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_variants_pass() {
        for v in [Variant::LstmCnnMatch, Variant::CnnMatch] {
            let r = toy_grad_check(v, 1).unwrap();
            assert!(r.max_rel_error < 1e-4, "{v}: {r:?}");
            assert!(r.checked > 100);
        }
    }

    #[test]
    fn cnn_variant_has_no_lstm_params() {
        let (m, _) = toy_problem(Variant::CnnMatch, 7, 0).unwrap();
        assert!(m.lstm().is_none());
        assert!(m.params().iter().all(|(_, p)| !p.name.starts_with("lstm.")));
    }
}
