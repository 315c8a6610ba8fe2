use super::{Gradients, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// First and second moment estimates, one buffer per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        let zeros = || params.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect();
        Self {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update. Frozen parameters are left untouched;
/// parameters without a gradient are updated as if it were zero.
pub fn adam_step(params: &mut ParamStore, grads: &Gradients, state: &mut AdamState) {
    state.t += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        if !params.get(id).requires_grad() {
            continue;
        }
        let g = grads.param(id);
        let (m, v) = (&mut state.m[id.index()], &mut state.v[id.index()]);
        let w = params.get_mut(id).data_mut();
        for i in 0..w.len() {
            let gi = g.map_or(0.0, |g| g[i]);
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
            let mh = m[i] / bc1;
            let vh = v[i] / bc2;
            w[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Graph, Tensor};

    fn grads_for(store: &ParamStore, f: impl Fn(f64) -> f64) -> Gradients {
        // d/dx of 0.5 * c * x^2 where c is chosen so the gradient is f(x).
        let id = store.ids().next().unwrap();
        let x = store.get(id).data()[0];
        let mut g = Graph::new(store);
        let n = g.param(id);
        let c = g.constant(Tensor::scalar(f(x)));
        let p = g.mul(n, c).unwrap();
        let s = g.sum(p);
        g.backward(s).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::column(vec![1.0, -2.0]), true);
        let mut st = AdamState::new(&store, AdamConfig::default());
        adam_step(&mut store, &Gradients::default(), &mut st);
        assert_eq!(store.get(id).data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(0.5), true);
        let mut st = AdamState::new(&store, AdamConfig::with_lr(0.01));
        let g = grads_for(&store, |_| 3.7);
        adam_step(&mut store, &g, &mut st);
        assert!((store.get(id).data()[0] - (0.5 - 0.01)).abs() < 1e-9);
    }

    #[test]
    fn frozen_param_is_skipped() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(0.5), true);
        let g = grads_for(&store, |_| 1.0);
        store.set_trainable(id, false);
        let mut st = AdamState::new(&store, AdamConfig::default());
        adam_step(&mut store, &g, &mut st);
        assert_eq!(store.get(id).data(), &[0.5]);
    }

    #[test]
    fn ten_steps_match_scalar_reference() {
        let cfg = AdamConfig::with_lr(0.05);
        let grad = |x: f64| 2.0 * x - 1.0;

        let (mut x, mut m, mut v) = (2.0f64, 0.0f64, 0.0f64);
        let mut expect = Vec::new();
        for t in 1..=10 {
            let g = grad(x);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= 0.05 * mh / (vh.sqrt() + 1e-8);
            expect.push(x);
        }

        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::scalar(2.0), true);
        let mut st = AdamState::new(&store, cfg);
        for want in expect {
            let g = grads_for(&store, grad);
            adam_step(&mut store, &g, &mut st);
            assert!((store.get(id).data()[0] - want).abs() < 1e-10);
        }
        assert_eq!(st.steps(), 10);
    }
}
