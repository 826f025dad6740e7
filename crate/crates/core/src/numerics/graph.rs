//! Reverse-mode tape over a dynamic graph, rebuilt for every forward pass.
//!
//! Nodes are appended in evaluation order, so the node index order is a
//! topological order and the backward sweep is a single reverse pass.

use std::collections::HashMap;

use super::ops::{self, matmul_nt_raw, matmul_raw, matmul_tn_raw, sigmoid, silu, silu_grad, softplus};
use super::{ParamId, ParamStore, Tensor};
use crate::error::{dim_err, Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for a fused operation whose forward value was computed
/// outside the tape. Returns one optional gradient per input, in order.
pub trait CustomBackward: Send + Sync {
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_out: &Tensor) -> Vec<Option<Tensor>>;
}

enum Op {
    Leaf,
    Param,
    Const,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Silu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        rstd: Vec<f64>,
    },
    Softmax(Var),
    Transpose(Var),
    Reshape(Var),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    RowScale(Var, Vec<f64>),
    GroupMax(Var, Vec<usize>),
    Sum(Var),
    Mse(Var, Var),
    Custom(Vec<Var>, Box<dyn CustomBackward>),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Dynamic computation graph.
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    recording: bool,
    macs: u64,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            recording: true,
            macs: 0,
        }
    }

    /// A graph that only evaluates. Fused ops skip their backward caches and
    /// [`Graph::backward`] is refused.
    pub fn inference() -> Self {
        Self {
            recording: false,
            ..Self::new()
        }
    }

    pub fn recording(&self) -> bool {
        self.recording
    }

    /// Multiply-accumulates performed by forward evaluation so far.
    pub fn macs(&self) -> u64 {
        self.macs
    }

    pub fn add_macs(&mut self, n: u64) {
        self.macs += n;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let needs_grad = self.recording
            && match &op {
                Op::Leaf | Op::Param => true,
                Op::Const => false,
                _ => parents(&op).iter().any(|p| self.nodes[p.0].needs_grad),
            };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input that is not a stored parameter.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Const)
    }

    /// Leaf node for a stored parameter; one node per parameter per graph.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param);
        self.params.insert(id, v);
        v
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Registers a fused op whose value was computed by the caller.
    pub fn custom(&mut self, inputs: Vec<Var>, value: Tensor, backward: Box<dyn CustomBackward>) -> Var {
        self.push(value, Op::Custom(inputs, backward))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.cols() != tb.rows() {
            return Err(dim_err("matmul", ta.shape(), tb.shape()));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let out = Tensor::new(vec![m, n], matmul_raw(ta.data(), tb.data(), m, k, n))?;
        self.macs += (m * k * n) as u64;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// Adds a length-D vector to every row of an L×D tensor.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let mut out = self.value(x).clone();
        ops::add_row_bias_in_place(&mut out, self.value(b))?;
        Ok(self.push(out, Op::AddBias(x, b)))
    }

    /// `x·w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    pub fn linear_nobias(&mut self, x: Var, w: Var) -> Result<Var> {
        self.matmul(x, w)
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(dim_err(name, ta.shape(), tb.shape()));
        }
        ta.zip_map(tb, f)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|v| v * s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(silu);
        self.push(out, Op::Silu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(softplus);
        self.push(out, Op::Softplus(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v * v);
        self.push(out, Op::Square(a))
    }

    /// Clamps into `[lo, hi]`; gradient is zero where the bound is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).map(|v| v.clamp(lo, hi));
        self.push(out, Op::Clamp(a, lo, hi))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let r = ops::layer_norm_full(self.value(x), self.value(gamma), self.value(beta), eps)?;
        let (xhat, rstd) = if self.recording {
            (r.xhat, r.rstd)
        } else {
            (Tensor::zeros(&[0]), Vec::new())
        };
        Ok(self.push(
            r.out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        ))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let out = ops::softmax_rows(self.value(x))?;
        Ok(self.push(out, Op::Softmax(x)))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let out = self.value(x).transpose();
        self.push(out, Op::Transpose(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let ts: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor::concat_rows(&ts)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        if start + len > t.rows() {
            return Err(Error::Argument(format!(
                "slice {start}..{} out of {} rows",
                start + len,
                t.rows()
            )));
        }
        let out = t.slice_rows(start, len);
        Ok(self.push(out, Op::SliceRows(x, start)))
    }

    /// Row gather; indices may repeat (used for broadcast and permutation).
    pub fn gather_rows(&mut self, x: Var, idx: Vec<usize>) -> Result<Var> {
        let t = self.value(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::Argument(format!("row {bad} out of {}", t.rows())));
        }
        let out = t.gather_rows(&idx);
        Ok(self.push(out, Op::GatherRows(x, idx)))
    }

    /// Multiplies each row by a constant factor.
    pub fn row_scale(&mut self, x: Var, factors: Vec<f64>) -> Result<Var> {
        let t = self.value(x);
        if factors.len() != t.rows() {
            return Err(dim_err("row_scale", t.shape(), &[factors.len()]));
        }
        let mut out = t.clone();
        for (i, f) in factors.iter().enumerate() {
            for v in out.row_mut(i) {
                *v *= f;
            }
        }
        Ok(self.push(out, Op::RowScale(x, factors)))
    }

    /// Max over consecutive runs of `group` rows: `(G·group)×D → G×D`.
    pub fn group_max(&mut self, x: Var, group: usize) -> Result<Var> {
        let t = self.value(x);
        if group == 0 || t.rows() % group != 0 {
            return Err(dim_err("group_max", t.shape(), &[group]));
        }
        let (g, d) = (t.rows() / group, t.cols());
        let mut out = Tensor::full(&[g, d], f64::NEG_INFINITY);
        let mut arg = vec![0usize; g * d];
        for gi in 0..g {
            for r in gi * group..(gi + 1) * group {
                let row = t.row(r);
                let orow = &mut out.data_mut()[gi * d..(gi + 1) * d];
                for j in 0..d {
                    if row[j] > orow[j] {
                        orow[j] = row[j];
                        arg[gi * d + j] = r;
                    }
                }
            }
        }
        Ok(self.push(out, Op::GroupMax(x, arg)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel().max(1) as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Mean squared difference as a scalar.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(dim_err("mse", ta.shape(), tb.shape()));
        }
        let n = ta.numel().max(1) as f64;
        let s: f64 = ta.data().iter().zip(tb.data()).map(|(x, y)| (x - y) * (x - y)).sum();
        Ok(self.push(Tensor::scalar(s / n), Op::Mse(a, b)))
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.recording {
            return Err(Error::Contract("backward on an inference graph".into()));
        }
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(Error::Contract(format!(
                "loss must be scalar, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lt.shape(), 1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let mut params: Vec<(ParamId, Var)> = self.params.iter().map(|(&id, &v)| (id, v)).collect();
        params.sort_unstable_by_key(|p| p.0);
        Ok(Gradients { grads, params })
    }

    fn backward_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, t: Tensor| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(e) => e.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf | Op::Param | Op::Const => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if self.nodes[a.0].needs_grad {
                    let ga = matmul_nt_raw(g.data(), tb.data(), m, n, k);
                    acc(*a, Tensor::new(vec![m, k], ga).unwrap());
                }
                if self.nodes[b.0].needs_grad {
                    let gb = matmul_tn_raw(ta.data(), g.data(), m, k, n);
                    acc(*b, Tensor::new(vec![k, n], gb).unwrap());
                }
            }
            Op::AddBias(x, b) => {
                acc(*x, g.clone());
                let d = g.cols();
                let mut gb = vec![0.0; d];
                for row in g.data().chunks(d) {
                    for (s, v) in gb.iter_mut().zip(row) {
                        *s += v;
                    }
                }
                acc(*b, Tensor::new(val(*b).shape().to_vec(), gb).unwrap());
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                acc(*a, g.zip_map(tb, |x, y| x * y).unwrap());
                acc(*b, g.zip_map(ta, |x, y| x * y).unwrap());
            }
            Op::Scale(a, s) => acc(*a, g.map(|v| v * s)),
            Op::Silu(a) => acc(*a, g.zip_map(val(*a), |gv, x| gv * silu_grad(x)).unwrap()),
            Op::Sigmoid(a) => acc(*a, g.zip_map(&node.value, |gv, s| gv * s * (1.0 - s)).unwrap()),
            Op::Softplus(a) => acc(*a, g.zip_map(val(*a), |gv, x| gv * sigmoid(x)).unwrap()),
            Op::Square(a) => acc(*a, g.zip_map(val(*a), |gv, x| 2.0 * gv * x).unwrap()),
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                acc(
                    *a,
                    g.zip_map(val(*a), |gv, x| if x < lo || x > hi { 0.0 } else { gv })
                        .unwrap(),
                );
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let c = g.cols();
                let gam = val(*gamma).data();
                let mut gx = Tensor::zeros(g.shape());
                let mut ggam = vec![0.0; c];
                let mut gbeta = vec![0.0; c];
                for r in 0..g.rows() {
                    let gr = g.row(r);
                    let hr = xhat.row(r);
                    let mut dxhat = vec![0.0; c];
                    for j in 0..c {
                        ggam[j] += gr[j] * hr[j];
                        gbeta[j] += gr[j];
                        dxhat[j] = gr[j] * gam[j];
                    }
                    let m1 = dxhat.iter().sum::<f64>() / c as f64;
                    let m2 = dxhat.iter().zip(hr).map(|(d, h)| d * h).sum::<f64>() / c as f64;
                    let out = gx.row_mut(r);
                    for j in 0..c {
                        out[j] = rstd[r] * (dxhat[j] - m1 - hr[j] * m2);
                    }
                }
                acc(*x, gx);
                acc(*gamma, Tensor::new(val(*gamma).shape().to_vec(), ggam).unwrap());
                acc(*beta, Tensor::new(val(*beta).shape().to_vec(), gbeta).unwrap());
            }
            Op::Softmax(x) => {
                let k = g.cols();
                let mut gx = Tensor::zeros(g.shape());
                for r in 0..g.rows() {
                    let (gr, yr) = (g.row(r), node.value.row(r));
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    let out = gx.row_mut(r);
                    for j in 0..k {
                        out[j] = yr[j] * (gr[j] - dot);
                    }
                }
                acc(*x, gx);
            }
            Op::Transpose(x) => acc(*x, g.transpose()),
            Op::Reshape(x) => acc(*x, g.reshape(val(*x).shape()).unwrap()),
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let rows = val(*p).rows();
                    acc(*p, g.slice_rows(off, rows).reshape(val(*p).shape()).unwrap());
                    off += rows;
                }
            }
            Op::SliceRows(x, start) => {
                let mut gx = Tensor::zeros(val(*x).shape());
                let c = g.cols();
                gx.data_mut()[start * c..start * c + g.numel()].copy_from_slice(g.data());
                acc(*x, gx);
            }
            Op::GatherRows(x, idx) => {
                let mut gx = Tensor::zeros(val(*x).shape());
                for (r, &src) in idx.iter().enumerate() {
                    let gr = g.row(r).to_vec();
                    for (o, v) in gx.row_mut(src).iter_mut().zip(gr) {
                        *o += v;
                    }
                }
                acc(*x, gx);
            }
            Op::RowScale(x, f) => {
                let mut gx = g.clone();
                for (r, s) in f.iter().enumerate() {
                    for v in gx.row_mut(r) {
                        *v *= s;
                    }
                }
                acc(*x, gx);
            }
            Op::GroupMax(x, arg) => {
                let d = g.cols();
                let mut gx = Tensor::zeros(val(*x).shape());
                for (k, &src) in arg.iter().enumerate() {
                    gx.data_mut()[src * d + k % d] += g.data()[k];
                }
                acc(*x, gx);
            }
            Op::Sum(x) => acc(*x, Tensor::full(val(*x).shape(), g.item())),
            Op::Mse(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let s = 2.0 * g.item() / ta.numel().max(1) as f64;
                let d = ta.zip_map(tb, |x, y| s * (x - y)).unwrap();
                acc(*b, d.map(|v| -v));
                acc(*a, d);
            }
            Op::Custom(inputs, f) => {
                let ins: Vec<&Tensor> = inputs.iter().map(|&v| val(v)).collect();
                let gs = f.backward(&ins, &node.value, g);
                for (v, gt) in inputs.iter().zip(gs) {
                    if let Some(gt) = gt {
                        acc(*v, gt);
                    }
                }
            }
        }
    }
}

fn parents(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf | Op::Param | Op::Const => vec![],
        Op::MatMul(a, b) | Op::AddBias(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Mse(a, b) => {
            vec![*a, *b]
        }
        Op::Scale(a, _)
        | Op::Silu(a)
        | Op::Sigmoid(a)
        | Op::Softplus(a)
        | Op::Square(a)
        | Op::Clamp(a, _, _)
        | Op::Softmax(a)
        | Op::Transpose(a)
        | Op::Reshape(a)
        | Op::SliceRows(a, _)
        | Op::GatherRows(a, _)
        | Op::RowScale(a, _)
        | Op::GroupMax(a, _)
        | Op::Sum(a) => vec![*a],
        Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
        Op::ConcatRows(p) => p.clone(),
        Op::Custom(p, _) => p.clone(),
    }
}

/// Result of a backward sweep.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient with respect to a node, `None` if the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradients for every parameter that entered the graph.
    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params
            .iter()
            .filter_map(|&(id, v)| self.grads[v.0].as_ref().map(|g| (id, g)))
    }

    /// Parameter gradients flattened in store order, zero where absent.
    pub fn flatten_params(&self, store: &ParamStore) -> Vec<f64> {
        let mut by_id: Vec<Option<&Tensor>> = vec![None; store.len()];
        for (id, g) in self.param_grads() {
            by_id[id.0] = Some(g);
        }
        let mut out = Vec::with_capacity(store.numel());
        for id in store.ids() {
            match by_id[id.0] {
                Some(g) => out.extend_from_slice(g.data()),
                None => out.extend(std::iter::repeat(0.0).take(store.get(id).numel())),
            }
        }
        out
    }
}
