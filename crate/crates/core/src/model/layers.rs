use rand::Rng;

use crate::nn::{Graph, NodeId, ParamId, ParamStore, Tensor};
use crate::text::OverlapFeatures;
use crate::Result;

/// Uniform draw in `±sqrt(6 / (fan_in + fan_out))`.
pub(crate) fn glorot<R: Rng>(rng: &mut R, shape: Vec<usize>, fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-a..a)).collect();
    Tensor::new(shape, data).expect("shape matches data")
}

/// Gate order used for every per-gate array below.
pub const GATES: [&str; 4] = ["i", "f", "o", "u"];

/// The twelve LSTM parameters, indexed by gate in [`GATES`] order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmParams {
    pub w: [ParamId; 4],
    pub u: [ParamId; 4],
    pub b: [ParamId; 4],
    pub in_dim: usize,
    pub hidden: usize,
}

impl LstmParams {
    pub fn init<R: Rng>(store: &mut ParamStore, rng: &mut R, in_dim: usize, hidden: usize) -> Self {
        let mut w = Vec::new();
        let mut u = Vec::new();
        let mut b = Vec::new();
        for gate in GATES {
            w.push(store.add(
                format!("lstm.W_{gate}"),
                glorot(rng, vec![hidden, in_dim], in_dim, hidden),
                true,
            ));
            u.push(store.add(
                format!("lstm.U_{gate}"),
                glorot(rng, vec![hidden, hidden], hidden, hidden),
                true,
            ));
            let fill = if gate == "f" { 1.0 } else { 0.0 };
            b.push(store.add(format!("lstm.b_{gate}"), Tensor::column(vec![fill; hidden]), false));
        }
        Self {
            w: w.try_into().expect("four gates"),
            u: u.try_into().expect("four gates"),
            b: b.try_into().expect("four gates"),
            in_dim,
            hidden,
        }
    }
}

/// Runs the recurrence over the columns of `x` (`in_dim x T`) and returns
/// the `hidden x T` matrix of hidden states.
pub fn lstm_forward(g: &mut Graph, x: NodeId, p: &LstmParams, h0: NodeId, c0: NodeId) -> Result<NodeId> {
    let t_len = g.value(x).cols();
    if t_len == 0 {
        return Err(crate::Error::invalid("lstm over an empty sequence"));
    }
    // Input projections for all steps at once.
    let mut wx = [x; 4];
    for (slot, &w) in wx.iter_mut().zip(&p.w) {
        let w = g.param(w);
        *slot = g.matmul(w, x)?;
    }
    let (mut h, mut c) = (h0, c0);
    let mut states = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let mut pre = [x; 4];
        for k in 0..4 {
            let xt = g.column(wx[k], t)?;
            let u = g.param(p.u[k]);
            let uh = g.matmul(u, h)?;
            let s = g.add(xt, uh)?;
            let b = g.param(p.b[k]);
            pre[k] = g.add(s, b)?;
        }
        let i = g.sigmoid(pre[0]);
        let f = g.sigmoid(pre[1]);
        let o = g.sigmoid(pre[2]);
        let u = g.tanh(pre[3]);
        let iu = g.mul(i, u)?;
        let fc = g.mul(f, c)?;
        c = g.add(iu, fc)?;
        let tc = g.tanh(c);
        h = g.mul(o, tc)?;
        states.push(h);
    }
    g.concat(&states, 1)
}

/// One convolution width: `filters` is `n x width x in_dim`, `bias` has `n`
/// rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FilterBlock {
    pub width: usize,
    pub filters: ParamId,
    pub bias: ParamId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterBank {
    pub blocks: Vec<FilterBlock>,
    pub n_filters: usize,
    pub in_dim: usize,
}

impl FilterBank {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        widths: &[usize],
        n_filters: usize,
        in_dim: usize,
    ) -> Result<Self> {
        let mut sorted = widths.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != widths.len() || sorted.first() == Some(&0) || sorted.is_empty() {
            return Err(crate::Error::invalid(format!(
                "filter widths must be distinct and positive, got {widths:?}"
            )));
        }
        let blocks = sorted
            .into_iter()
            .map(|k| FilterBlock {
                width: k,
                filters: store.add(
                    format!("conv{k}.filters"),
                    glorot(rng, vec![n_filters, k, in_dim], k * in_dim, n_filters),
                    true,
                ),
                bias: store.add(format!("conv{k}.bias"), Tensor::column(vec![0.0; n_filters]), false),
            })
            .collect();
        Ok(Self {
            blocks,
            n_filters,
            in_dim,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.blocks.len() * self.n_filters
    }
}

/// Narrow convolution per width, ReLU, max over time, blocks stacked in
/// ascending width. Sequences shorter than a width are zero-padded to it.
pub fn conv_relu_pool(g: &mut Graph, h: NodeId, bank: &FilterBank) -> Result<NodeId> {
    let mut pooled = Vec::with_capacity(bank.blocks.len());
    for block in &bank.blocks {
        let x = g.pad_columns(h, block.width)?;
        let f = g.param(block.filters);
        let b = g.param(block.bias);
        let c = g.conv1d(x, f, b)?;
        let r = g.relu(c);
        pooled.push(g.max_over_axis(r, 1)?);
    }
    g.concat(&pooled, 0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JoinParams {
    /// `d x d` bilinear similarity matrix.
    pub m: ParamId,
    /// `hidden x (2d + 1)`.
    pub w: ParamId,
    pub b: ParamId,
    /// `1 x hidden`.
    pub out_w: ParamId,
    pub out_b: ParamId,
}

impl JoinParams {
    pub fn init<R: Rng>(store: &mut ParamStore, rng: &mut R, rep_dim: usize, hidden: usize) -> Self {
        let joined = 2 * rep_dim + 1;
        Self {
            m: store.add("join.M", glorot(rng, vec![rep_dim, rep_dim], rep_dim, rep_dim), true),
            w: store.add("join.W", glorot(rng, vec![hidden, joined], joined, hidden), true),
            b: store.add("join.b", Tensor::column(vec![0.0; hidden]), false),
            out_w: store.add("join.out_W", glorot(rng, vec![1, hidden], hidden, 1), true),
            out_b: store.add("join.out_b", Tensor::scalar(0.0), false),
        }
    }
}

/// `[w_nn, w_count, w_idf]` and the bias of the final logistic layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FusionParams {
    pub w: ParamId,
    pub b: ParamId,
}

impl FusionParams {
    pub fn init<R: Rng>(store: &mut ParamStore, rng: &mut R) -> Self {
        let a = (6.0f64 / 2.0).sqrt();
        let w_nn = rng.gen_range(-a..a);
        Self {
            w: store.add("fusion.w", Tensor::matrix(1, 3, vec![w_nn, 0.0, 0.0]).expect("1x3"), true),
            b: store.add("fusion.b", Tensor::scalar(0.0), false),
        }
    }
}

/// Neural probability from two representations.
pub fn join(g: &mut Graph, vq: NodeId, vp: NodeId, p: &JoinParams) -> Result<NodeId> {
    let qt = g.transpose(vq)?;
    let m = g.param(p.m);
    let qm = g.matmul(qt, m)?;
    let sim = g.matmul(qm, vp)?;
    let joined = g.concat(&[vq, sim, vp], 0)?;
    let w = g.param(p.w);
    let b = g.param(p.b);
    let wj = g.matmul(w, joined)?;
    let pre = g.add(wj, b)?;
    let hidden = g.tanh(pre);
    let ow = g.param(p.out_w);
    let ob = g.param(p.out_b);
    let o = g.matmul(ow, hidden)?;
    let logit = g.add(o, ob)?;
    Ok(g.sigmoid(logit))
}

/// Final score from the neural probability and the overlap features.
pub fn fuse(g: &mut Graph, p_nn: NodeId, feats: OverlapFeatures, p: &FusionParams) -> Result<NodeId> {
    let extra = g.constant(Tensor::column(vec![feats.count as f64, feats.idf_weighted]));
    let x = g.concat(&[p_nn, extra], 0)?;
    let w = g.param(p.w);
    let b = g.param(p.b);
    let wx = g.matmul(w, x)?;
    let z = g.add(wx, b)?;
    Ok(g.sigmoid(z))
}

pub fn join_and_score(
    g: &mut Graph,
    vq: NodeId,
    vp: NodeId,
    feats: OverlapFeatures,
    join_params: &JoinParams,
    fusion: &FusionParams,
) -> Result<NodeId> {
    let p_nn = join(g, vq, vp, join_params)?;
    fuse(g, p_nn, feats, fusion)
}
