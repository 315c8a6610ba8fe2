use std::collections::HashMap;

use super::{ParamId, ParamStore, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Shift(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Concat { parts: Vec<NodeId>, axis: usize },
    Column(NodeId, usize),
    PadColumns(NodeId),
    Transpose(NodeId),
    MaxOverAxis { input: NodeId, axis: usize, argmax: Vec<usize> },
    Sum(NodeId),
    L2NormSq(NodeId),
    Conv1d { input: NodeId, filters: NodeId, bias: NodeId, width: usize },
    Embed { table: NodeId, ids: Vec<u32> },
}

#[derive(Debug)]
struct Node {
    op: Op,
    // `None` for parameter nodes, whose value lives in the store.
    value: Option<Tensor>,
    needs_grad: bool,
}

/// A single-use computation graph over a borrowed [`ParamStore`].
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order for the backward sweep.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, NodeId>,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    params: Vec<Option<Vec<f64>>>,
    inputs: HashMap<NodeId, Tensor>,
}

impl Gradients {
    /// Gradient of a parameter; `None` when it did not participate (an
    /// all-zero gradient) or is frozen.
    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params.get(id.0).and_then(|g| g.as_deref())
    }

    /// Gradient of a parameter, materializing zeros when absent.
    pub fn param_or_zeros(&self, id: ParamId, store: &ParamStore) -> Vec<f64> {
        self.param(id)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; store.get(id).len()])
    }

    /// Gradient of an input node created with `requires_grad`.
    pub fn input(&self, id: NodeId) -> Option<&Tensor> {
        self.inputs.get(&id)
    }

    /// Adds another set of parameter gradients into this one.
    pub fn accumulate(&mut self, other: &Gradients) {
        if self.params.len() < other.params.len() {
            self.params.resize(other.params.len(), None);
        }
        for (mine, theirs) in self.params.iter_mut().zip(&other.params) {
            match (mine.as_mut(), theirs) {
                (Some(a), Some(b)) => a.iter_mut().zip(b).for_each(|(x, y)| *x += y),
                (None, Some(b)) => *mine = Some(b.clone()),
                _ => {}
            }
        }
    }

    /// Adds `c * values` into the gradient of one parameter.
    pub fn add_scaled(&mut self, id: ParamId, values: &[f64], c: f64) {
        if self.params.len() <= id.0 {
            self.params.resize(id.0 + 1, None);
        }
        let g = self.params[id.0].get_or_insert_with(|| vec![0.0; values.len()]);
        g.iter_mut().zip(values).for_each(|(x, v)| *x += c * v);
    }

    pub fn sq_norm(&self) -> f64 {
        self.params
            .iter()
            .flatten()
            .flat_map(|g| g.iter())
            .map(|x| x * x)
            .sum()
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn require_matrix(op: &'static str, t: &Tensor) -> Result<()> {
    if t.is_matrix() {
        Ok(())
    } else {
        Err(Error::Shape {
            op,
            left: t.shape().to_vec(),
            right: vec![],
        })
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect()).expect("same shape")
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::new(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
    .expect("same shape")
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        let node = &self.nodes[id.0];
        match node.op {
            Op::Param(p) => self.params.get(p),
            _ => node.value.as_ref().expect("non-parameter node has a value"),
        }
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        self.value(id).data()[0]
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value: Some(value),
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].needs_grad)
    }

    /// A leaf holding `t`. Gradients are reported for it when
    /// `t.requires_grad()` is set.
    pub fn input(&mut self, t: Tensor) -> NodeId {
        let needs = t.requires_grad();
        self.push(Op::Input, t, needs)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.input(t.with_requires_grad(false))
    }

    /// The node for a parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(&n) = self.param_nodes.get(&id) {
            return n;
        }
        let needs = self.params.get(id).requires_grad();
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
            needs_grad: needs,
        });
        let n = NodeId(self.nodes.len() - 1);
        self.param_nodes.insert(id, n);
        n
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        require_matrix("matmul", ta)?;
        require_matrix("matmul", tb)?;
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        if tb.rows() != k {
            return Err(shape_err("matmul", ta, tb));
        }
        let (ad, bd) = (ta.data(), tb.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = ad[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &bd[p * n..(p + 1) * n];
                for (o, &y) in row.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
        let needs = self.needs(&[a, b]);
        Ok(self.push(Op::MatMul(a, b), Tensor::matrix(m, n, out)?, needs))
    }

    fn binary(&mut self, op: &'static str, a: NodeId, b: NodeId) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, ta, tb));
        }
        Ok(match op {
            "add" => zip(ta, tb, |x, y| x + y),
            "sub" => zip(ta, tb, |x, y| x - y),
            _ => zip(ta, tb, |x, y| x * y),
        })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.binary("add", a, b)?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(Op::Add(a, b), v, needs))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.binary("sub", a, b)?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(Op::Sub(a, b), v, needs))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.binary("mul", a, b)?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(Op::Mul(a, b), v, needs))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = map(self.value(a), |x| x * c);
        let needs = self.needs(&[a]);
        self.push(Op::Scale(a, c), v, needs)
    }

    /// `a + c` elementwise.
    pub fn shift(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = map(self.value(a), |x| x + c);
        let needs = self.needs(&[a]);
        self.push(Op::Shift(a), v, needs)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = map(self.value(a), sigmoid);
        let needs = self.needs(&[a]);
        self.push(Op::Sigmoid(a), v, needs)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = map(self.value(a), f64::tanh);
        let needs = self.needs(&[a]);
        self.push(Op::Tanh(a), v, needs)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = map(self.value(a), |x| x.max(0.0));
        let needs = self.needs(&[a]);
        self.push(Op::Relu(a), v, needs)
    }

    /// Concatenates matrices along `axis` (0 = stack rows, 1 = append
    /// columns).
    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        let first = parts
            .first()
            .map(|&p| self.value(p))
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        require_matrix("concat", first)?;
        if axis > 1 {
            return Err(Error::invalid(format!("concat axis {axis} on a matrix")));
        }
        let (rows0, cols0) = (first.rows(), first.cols());
        for &p in &parts[1..] {
            let t = self.value(p);
            require_matrix("concat", t)?;
            let ok = if axis == 0 { t.cols() == cols0 } else { t.rows() == rows0 };
            if !ok {
                return Err(shape_err("concat", first, t));
            }
        }
        let value = if axis == 0 {
            let rows = parts.iter().map(|&p| self.value(p).rows()).sum();
            let mut data = Vec::with_capacity(rows * cols0);
            for &p in parts {
                data.extend_from_slice(self.value(p).data());
            }
            Tensor::matrix(rows, cols0, data)?
        } else {
            let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
            let mut data = Vec::with_capacity(rows0 * cols);
            for r in 0..rows0 {
                for &p in parts {
                    let t = self.value(p);
                    let c = t.cols();
                    data.extend_from_slice(&t.data()[r * c..(r + 1) * c]);
                }
            }
            Tensor::matrix(rows0, cols, data)?
        };
        let needs = self.needs(parts);
        Ok(self.push(
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            value,
            needs,
        ))
    }

    /// Column `c` of a matrix as a column vector.
    pub fn column(&mut self, a: NodeId, c: usize) -> Result<NodeId> {
        let t = self.value(a);
        require_matrix("column", t)?;
        if c >= t.cols() {
            return Err(Error::Shape {
                op: "column",
                left: t.shape().to_vec(),
                right: vec![c],
            });
        }
        let v = t.column_at(c);
        let needs = self.needs(&[a]);
        Ok(self.push(Op::Column(a, c), v, needs))
    }

    /// Appends zero columns so the matrix has at least `min_cols` columns.
    pub fn pad_columns(&mut self, a: NodeId, min_cols: usize) -> Result<NodeId> {
        let t = self.value(a);
        require_matrix("pad_columns", t)?;
        if t.cols() >= min_cols {
            return Ok(a);
        }
        let (rows, cols) = (t.rows(), t.cols());
        let v = Tensor::from_fn(rows, min_cols, |r, c| if c < cols { t.get(r, c) } else { 0.0 });
        let needs = self.needs(&[a]);
        Ok(self.push(Op::PadColumns(a), v, needs))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.value(a);
        require_matrix("transpose", t)?;
        let v = Tensor::from_fn(t.cols(), t.rows(), |r, c| t.get(c, r));
        let needs = self.needs(&[a]);
        Ok(self.push(Op::Transpose(a), v, needs))
    }

    /// Maximum along `axis` (0 = over rows, giving `1 x cols`; 1 = over
    /// columns, giving `rows x 1`). Ties resolve to the lowest index.
    pub fn max_over_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let t = self.value(a);
        require_matrix("max_over_axis", t)?;
        let (rows, cols) = (t.rows(), t.cols());
        if rows == 0 || cols == 0 || axis > 1 {
            return Err(Error::Shape {
                op: "max_over_axis",
                left: t.shape().to_vec(),
                right: vec![axis],
            });
        }
        let (outer, inner) = if axis == 1 { (rows, cols) } else { (cols, rows) };
        let at = |o: usize, i: usize| if axis == 1 { t.get(o, i) } else { t.get(i, o) };
        let mut argmax = Vec::with_capacity(outer);
        let mut vals = Vec::with_capacity(outer);
        for o in 0..outer {
            let mut best = 0;
            let mut bv = at(o, 0);
            for i in 1..inner {
                let x = at(o, i);
                if x > bv {
                    best = i;
                    bv = x;
                }
            }
            argmax.push(best);
            vals.push(bv);
        }
        let v = if axis == 1 {
            Tensor::column(vals)
        } else {
            Tensor::matrix(1, cols, vals)?
        };
        let needs = self.needs(&[a]);
        Ok(self.push(Op::MaxOverAxis { input: a, axis, argmax }, v, needs))
    }

    /// Sum of all elements as a `1 x 1` tensor.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).data().iter().sum());
        let needs = self.needs(&[a]);
        self.push(Op::Sum(a), v, needs)
    }

    /// Squared L2 norm as a `1 x 1` tensor.
    pub fn l2_norm_sq(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).sq_norm());
        let needs = self.needs(&[a]);
        self.push(Op::L2NormSq(a), v, needs)
    }

    /// Narrow (valid) 1-d convolution over time.
    ///
    /// `input` is `in_dim x T`, `filters` is `n x width x in_dim`, `bias` has
    /// `n` elements. The result is `n x (T - width + 1)`.
    pub fn conv1d(&mut self, input: NodeId, filters: NodeId, bias: NodeId) -> Result<NodeId> {
        let (x, f, b) = (self.value(input), self.value(filters), self.value(bias));
        require_matrix("conv1d", x)?;
        if f.shape().len() != 3 || f.shape()[2] != x.rows() {
            return Err(shape_err("conv1d", f, x));
        }
        let (n, width, d) = (f.shape()[0], f.shape()[1], f.shape()[2]);
        if b.len() != n {
            return Err(shape_err("conv1d", f, b));
        }
        let t_len = x.cols();
        if width == 0 || t_len < width {
            return Err(shape_err("conv1d", x, f));
        }
        let out_len = t_len - width + 1;
        let (xd, fd, bd) = (x.data(), f.data(), b.data());
        let mut out = vec![0.0; n * out_len];
        for fi in 0..n {
            for t in 0..out_len {
                let mut acc = bd[fi];
                for j in 0..width {
                    let w = &fd[(fi * width + j) * d..(fi * width + j + 1) * d];
                    for (r, &wr) in w.iter().enumerate() {
                        acc += wr * xd[r * t_len + t + j];
                    }
                }
                out[fi * out_len + t] = acc;
            }
        }
        let needs = self.needs(&[input, filters, bias]);
        Ok(self.push(
            Op::Conv1d {
                input,
                filters,
                bias,
                width,
            },
            Tensor::matrix(n, out_len, out)?,
            needs,
        ))
    }

    /// Gathers rows of a `V x dim` table into a `dim x T` matrix whose
    /// column `t` is the row for `ids[t]`.
    pub fn embed(&mut self, table: NodeId, ids: &[u32]) -> Result<NodeId> {
        let t = self.value(table);
        require_matrix("embed", t)?;
        let (v, dim) = (t.rows(), t.cols());
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= v) {
            return Err(Error::Shape {
                op: "embed",
                left: t.shape().to_vec(),
                right: vec![bad as usize],
            });
        }
        let n = ids.len();
        let mut out = vec![0.0; dim * n];
        for (c, &id) in ids.iter().enumerate() {
            let row = &t.data()[id as usize * dim..(id as usize + 1) * dim];
            for (r, &x) in row.iter().enumerate() {
                out[r * n + c] = x;
            }
        }
        let needs = self.needs(&[table]);
        Ok(self.push(
            Op::Embed {
                table,
                ids: ids.to_vec(),
            },
            Tensor::matrix(dim, n, out)?,
            needs,
        ))
    }

    /// Reverse sweep from a `1 x 1` loss node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Shape {
                op: "backward",
                left: lv.shape().to_vec(),
                right: vec![1, 1],
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients {
            params: vec![None; self.params.len()],
            inputs: HashMap::new(),
        };

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.propagate(i, &node.op, g, &mut grads, &mut out);
        }
        Ok(out)
    }

    fn propagate(
        &self,
        i: usize,
        op: &Op,
        g: Vec<f64>,
        grads: &mut [Option<Vec<f64>>],
        out: &mut Gradients,
    ) {
        // Runs `$body` on the accumulation buffer of parent `$p`, skipping
        // parents that need no gradient.
        macro_rules! with_buf {
            ($p:expr, |$b:ident| $body:expr) => {{
                let p: NodeId = $p;
                if self.nodes[p.0].needs_grad {
                    let len = self.value(p).len();
                    let mut owned = grads[p.0].take().unwrap_or_else(|| vec![0.0; len]);
                    {
                        let $b: &mut Vec<f64> = &mut owned;
                        $body
                    }
                    grads[p.0] = Some(owned);
                }
            }};
        }

        match op {
            Op::Input => {
                let shape = self.nodes[i].value.as_ref().expect("input value").shape().to_vec();
                out.inputs
                    .insert(NodeId(i), Tensor::new(shape, g).expect("gradient shape"));
            }
            Op::Param(p) => {
                out.params[p.0] = Some(g);
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                // dA = G * B^T
                with_buf!(*a, |da| {
                    let bd = tb.data();
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let brow = &bd[p * n..(p + 1) * n];
                            da[r * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                // dB = A^T * G
                with_buf!(*b, |db| {
                    let ad = ta.data();
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let x = ad[r * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            for (o, &y) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += x * y;
                            }
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                with_buf!(*a, |da| add_into(da, &g));
                with_buf!(*b, |db| add_into(db, &g));
            }
            Op::Sub(a, b) => {
                with_buf!(*a, |da| add_into(da, &g));
                with_buf!(*b, |db| db.iter_mut().zip(&g).for_each(|(o, x)| *o -= x));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                with_buf!(*a, |da| {
                    for ((o, x), y) in da.iter_mut().zip(&g).zip(tb.data()) {
                        *o += x * y;
                    }
                });
                with_buf!(*b, |db| {
                    for ((o, x), y) in db.iter_mut().zip(&g).zip(ta.data()) {
                        *o += x * y;
                    }
                });
            }
            Op::Scale(a, c) => with_buf!(*a, |da| da.iter_mut().zip(&g).for_each(|(o, x)| *o += c * x)),
            Op::Shift(a) => with_buf!(*a, |da| add_into(da, &g)),
            Op::Sigmoid(a) => {
                let y = self.nodes[i].value.as_ref().expect("value").data();
                with_buf!(*a, |da| {
                    for ((o, x), s) in da.iter_mut().zip(&g).zip(y) {
                        *o += x * s * (1.0 - s);
                    }
                });
            }
            Op::Tanh(a) => {
                let y = self.nodes[i].value.as_ref().expect("value").data();
                with_buf!(*a, |da| {
                    for ((o, x), t) in da.iter_mut().zip(&g).zip(y) {
                        *o += x * (1.0 - t * t);
                    }
                });
            }
            Op::Relu(a) => {
                let xin = self.value(*a).data();
                with_buf!(*a, |da| {
                    for ((o, x), v) in da.iter_mut().zip(&g).zip(xin) {
                        if *v > 0.0 {
                            *o += x;
                        }
                    }
                });
            }
            Op::Concat { parts, axis } => {
                if *axis == 0 {
                    let mut off = 0;
                    for &p in parts {
                        let len = self.value(p).len();
                        with_buf!(p, |dp| add_into(dp, &g[off..off + len]));
                        off += len;
                    }
                } else {
                    let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
                    let rows = self.value(parts[0]).rows();
                    let mut col_off = 0;
                    for &p in parts {
                        let c = self.value(p).cols();
                        with_buf!(p, |dp| {
                            for r in 0..rows {
                                add_into(&mut dp[r * c..(r + 1) * c], &g[r * total + col_off..r * total + col_off + c]);
                            }
                        });
                        col_off += c;
                    }
                }
            }
            Op::Column(a, c) => {
                let cols = self.value(*a).cols();
                with_buf!(*a, |da| {
                    for (r, x) in g.iter().enumerate() {
                        da[r * cols + c] += x;
                    }
                });
            }
            Op::PadColumns(a) => {
                let t = self.value(*a);
                let (rows, cols) = (t.rows(), t.cols());
                let padded = g.len() / rows.max(1);
                with_buf!(*a, |da| {
                    for r in 0..rows {
                        for c in 0..cols {
                            da[r * cols + c] += g[r * padded + c];
                        }
                    }
                });
            }
            Op::Transpose(a) => {
                let t = self.value(*a);
                let (rows, cols) = (t.rows(), t.cols());
                with_buf!(*a, |da| {
                    for r in 0..rows {
                        for c in 0..cols {
                            da[r * cols + c] += g[c * rows + r];
                        }
                    }
                });
            }
            Op::MaxOverAxis { input, axis, argmax } => {
                let cols = self.value(*input).cols();
                with_buf!(*input, |da| {
                    for (o, (&best, x)) in argmax.iter().zip(&g).enumerate() {
                        let idx = if *axis == 1 { o * cols + best } else { best * cols + o };
                        da[idx] += x;
                    }
                });
            }
            Op::Sum(a) => with_buf!(*a, |da| da.iter_mut().for_each(|o| *o += g[0])),
            Op::L2NormSq(a) => {
                let xin = self.value(*a).data();
                with_buf!(*a, |da| {
                    for (o, v) in da.iter_mut().zip(xin) {
                        *o += 2.0 * v * g[0];
                    }
                });
            }
            Op::Conv1d {
                input,
                filters,
                bias,
                width,
            } => {
                let (x, f) = (self.value(*input), self.value(*filters));
                let (n, d, t_len) = (f.shape()[0], x.rows(), x.cols());
                let out_len = t_len - width + 1;
                let (xd, fd) = (x.data(), f.data());
                with_buf!(*bias, |db| {
                    for fi in 0..n {
                        db[fi] += g[fi * out_len..(fi + 1) * out_len].iter().sum::<f64>();
                    }
                });
                with_buf!(*filters, |df| {
                    for fi in 0..n {
                        for t in 0..out_len {
                            let gv = g[fi * out_len + t];
                            if gv == 0.0 {
                                continue;
                            }
                            for j in 0..*width {
                                let base = (fi * width + j) * d;
                                for r in 0..d {
                                    df[base + r] += gv * xd[r * t_len + t + j];
                                }
                            }
                        }
                    }
                });
                with_buf!(*input, |dx| {
                    for fi in 0..n {
                        for t in 0..out_len {
                            let gv = g[fi * out_len + t];
                            if gv == 0.0 {
                                continue;
                            }
                            for j in 0..*width {
                                let base = (fi * width + j) * d;
                                for r in 0..d {
                                    dx[r * t_len + t + j] += gv * fd[base + r];
                                }
                            }
                        }
                    }
                });
            }
            Op::Embed { table, ids } => {
                let dim = self.value(*table).cols();
                let n = ids.len();
                with_buf!(*table, |dt| {
                    for (c, &id) in ids.iter().enumerate() {
                        for r in 0..dim {
                            dt[id as usize * dim + r] += g[r * n + c];
                        }
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (o, x) in dst.iter_mut().zip(src) {
        *o += x;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, GradCheckConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        Tensor::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn relu_sigmoid_tanh_values() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.constant(Tensor::column(vec![-1.0, 2.0]));
        let r = g.relu(x);
        assert_eq!(g.value(r).data(), &[0.0, 2.0]);
        let z = g.constant(Tensor::scalar(0.0));
        let s = g.sigmoid(z);
        let t = g.tanh(z);
        assert_eq!(g.scalar(s), 0.5);
        assert_eq!(g.scalar(t), 0.0);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rand_tensor(&mut rng, 4, 3);
        let b = rand_tensor(&mut rng, 3, 2);
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let (na, nb) = (g.constant(a.clone()), g.constant(b.clone()));
        let c = g.matmul(na, nb).unwrap();
        for i in 0..4 {
            for j in 0..2 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += a.get(i, k) * b.get(k, j);
                }
                assert!((g.value(c).get(i, j) - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let a = g.constant(Tensor::zeros(vec![2, 3]));
        let b = g.constant(Tensor::zeros(vec![2, 3]));
        match g.matmul(a, b) {
            Err(Error::Shape { op, left, right }) => {
                assert_eq!(op, "matmul");
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![2, 3]);
            }
            other => panic!("{other:?}"),
        }
        let c = g.constant(Tensor::zeros(vec![3, 2]));
        assert!(g.add(a, c).is_err());
    }

    #[test]
    fn square_gradient() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::scalar(3.0), false);
        let g = {
            let mut g = Graph::new(&store);
            let n = g.param(x);
            let y = g.mul(n, n).unwrap();
            g.backward(y).unwrap()
        };
        assert_eq!(g.param(x).unwrap(), &[6.0]);
    }

    #[test]
    fn dead_relu_gradient() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::scalar(-1.0).with_requires_grad(true));
        let y = g.relu(x);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.input(x).unwrap().data(), &[0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::column(vec![1.0, 2.0]).with_requires_grad(true));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn unused_param_has_no_gradient() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::scalar(2.0), true);
        let b = store.add("b", Tensor::scalar(5.0), true);
        let mut g = Graph::new(&store);
        let na = g.param(a);
        let l = g.l2_norm_sq(na);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.param(a).unwrap(), &[4.0]);
        assert!(grads.param(b).is_none());
        assert_eq!(grads.param_or_zeros(b, &store), vec![0.0]);
    }

    #[test]
    fn max_ties_pick_lowest_index() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::matrix(1, 4, vec![1.0, 3.0, 3.0, 0.0]).unwrap().with_requires_grad(true));
        let m = g.max_over_axis(x, 1).unwrap();
        let s = g.sum(m);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.input(x).unwrap().data(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn backward_is_linear_in_the_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let w = store.add("w", rand_tensor(&mut rng, 3, 3), true);
        let x = rand_tensor(&mut rng, 3, 1);
        let build = |g: &mut Graph, which: u8| -> NodeId {
            let wn = g.param(w);
            let xn = g.constant(x.clone());
            let h = g.matmul(wn, xn).unwrap();
            let a = g.tanh(h);
            let b = g.sigmoid(h);
            let sa = g.sum(a);
            let sb = g.l2_norm_sq(b);
            match which {
                0 => sa,
                1 => sb,
                _ => g.add(sa, sb).unwrap(),
            }
        };
        let grad = |which| {
            let mut g = Graph::new(&store);
            let l = build(&mut g, which);
            g.backward(l).unwrap().param(w).unwrap().to_vec()
        };
        let (ga, gb, gs) = (grad(0), grad(1), grad(2));
        for i in 0..9 {
            assert!((ga[i] + gb[i] - gs[i]).abs() < 1e-14);
        }
    }

    // Each primitive against central differences at random points.
    #[test]
    fn primitive_gradients_match_finite_differences() {
        type Build = fn(&mut Graph, NodeId, NodeId) -> NodeId;
        let cases: Vec<(&str, Build)> = vec![
            ("matmul", |g, a, b| {
                let t = g.transpose(b).unwrap();
                g.matmul(a, t).unwrap()
            }),
            ("add", |g, a, b| g.add(a, b).unwrap()),
            ("sub", |g, a, b| g.sub(a, b).unwrap()),
            ("mul", |g, a, b| g.mul(a, b).unwrap()),
            ("scale_shift", |g, a, _| {
                let s = g.scale(a, -1.7);
                g.shift(s, 0.3)
            }),
            ("sigmoid", |g, a, _| g.sigmoid(a)),
            ("tanh", |g, a, _| g.tanh(a)),
            ("relu", |g, a, _| g.relu(a)),
            ("concat0", |g, a, b| g.concat(&[a, b], 0).unwrap()),
            ("concat1", |g, a, b| g.concat(&[a, b, a], 1).unwrap()),
            ("column", |g, a, _| g.column(a, 2).unwrap()),
            ("pad", |g, a, _| g.pad_columns(a, 6).unwrap()),
            ("max0", |g, a, _| g.max_over_axis(a, 0).unwrap()),
            ("max1", |g, a, _| g.max_over_axis(a, 1).unwrap()),
            ("l2", |g, a, _| g.l2_norm_sq(a)),
        ];
        for (name, build) in cases {
            for point in 0..20u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(point * 31 + name.len() as u64);
                let mut store = ParamStore::new();
                // Keep pre-activations away from relu/max kinks.
                let draw = |rng: &mut ChaCha8Rng| {
                    Tensor::from_fn(2, 4, |_, _| {
                        let v: f64 = rng.gen_range(0.05..1.0);
                        if rng.gen_bool(0.5) { v } else { -v }
                    })
                };
                let a = store.add("a", draw(&mut rng), false);
                let b = store.add("b", draw(&mut rng), false);
                let weights = Tensor::from_fn(1, 64, |_, c| 0.3 + 0.1 * c as f64);
                let report = grad_check(&mut store, &GradCheckConfig::default(), |g| {
                    let (na, nb) = (g.param(a), g.param(b));
                    let out = build(g, na, nb);
                    // Weighted sum so every output element matters differently.
                    let v = g.value(out);
                    let (r, c) = (v.rows(), v.cols());
                    let w = g.constant(Tensor::matrix(r, c, weights.data()[..r * c].to_vec()).unwrap());
                    let p = g.mul(out, w)?;
                    Ok(g.sum(p))
                })
                .unwrap();
                assert!(report.max_rel_error < 1e-6, "{name} point {point}: {report:?}");
            }
        }
    }

    #[test]
    fn conv_and_embed_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut store = ParamStore::new();
        let table = store.add("table", rand_tensor(&mut rng, 6, 3), false);
        let filt = store.add(
            "filt",
            Tensor::new(vec![2, 2, 3], (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap(),
            true,
        );
        let bias = store.add("bias", Tensor::column(vec![0.1, -0.2]), false);
        let report = grad_check(&mut store, &GradCheckConfig::default(), |g| {
            let t = g.param(table);
            let x = g.embed(t, &[3, 0, 5, 3, 1])?;
            let (f, b) = (g.param(filt), g.param(bias));
            let c = g.conv1d(x, f, b)?;
            let h = g.tanh(c);
            let s = g.mul(h, h)?;
            Ok(g.sum(s))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let w = store.add("w", rand_tensor(&mut rng, 5, 5), true);
        let run = || {
            let mut g = Graph::new(&store);
            let n = g.param(w);
            let m = g.matmul(n, n).unwrap();
            let s = g.sigmoid(m);
            g.value(s).data().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
