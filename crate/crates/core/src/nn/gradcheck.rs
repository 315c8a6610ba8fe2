use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, NodeId, ParamId, ParamStore};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub h: f64,
    /// Components checked when the model is larger than this are sampled.
    pub max_components: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            h: 1e-5,
            max_components: 10_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name, flat index, analytic and numeric values at the worst
    /// component.
    pub worst: Option<(String, usize, f64, f64)>,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-7);
    (analytic - numeric).abs() / denom
}

fn eval<F>(store: &ParamStore, f: &F) -> Result<f64>
where
    F: Fn(&mut Graph<'_>) -> Result<NodeId>,
{
    let mut g = Graph::new(store);
    let out = f(&mut g)?;
    Ok(g.scalar(out))
}

/// Compares analytic gradients of the scalar built by `f` with central
/// differences over every trainable component (or a seeded sample of them).
pub fn grad_check<F>(store: &mut ParamStore, cfg: &GradCheckConfig, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>) -> Result<NodeId>,
{
    let analytic: Vec<(ParamId, Vec<f64>)> = {
        let mut g = Graph::new(store);
        let out = f(&mut g)?;
        let grads = g.backward(out)?;
        store
            .iter()
            .filter(|(_, p)| p.value.requires_grad())
            .map(|(id, _)| (id, grads.param_or_zeros(id, store)))
            .collect()
    };

    let slots: Vec<(usize, usize)> = analytic
        .iter()
        .enumerate()
        .flat_map(|(k, (_, g))| (0..g.len()).map(move |i| (k, i)))
        .collect();
    let chosen: Vec<(usize, usize)> = if slots.len() > cfg.max_components {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut idx = sample(&mut rng, slots.len(), cfg.max_components).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| slots[i]).collect()
    } else {
        slots
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for (k, i) in chosen {
        let (id, ref grad) = analytic[k];
        let orig = store.get(id).data()[i];
        store.get_mut(id).data_mut()[i] = orig + cfg.h;
        let plus = eval(store, &f);
        store.get_mut(id).data_mut()[i] = orig - cfg.h;
        let minus = eval(store, &f);
        store.get_mut(id).data_mut()[i] = orig;
        let numeric = (plus? - minus?) / (2.0 * cfg.h);
        let err = relative_error(grad[i], numeric);
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some((store.param(id).name.clone(), i, grad[i], numeric));
        }
    }
    Ok(report)
}
