//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] records every forward operation as a node. Nodes are appended
//! in evaluation order, so the reverse of insertion order is a valid
//! topological order for the backward sweep. Parameters enter the tape by
//! name through [`Graph::param`]; [`Gradients::by_name`] maps the resulting
//! gradients back to those names.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tensor::{matmul_at_raw, matmul_bt_raw, matmul_raw, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
    LeakyRelu(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    LogSoftmax {
        x: Var,
        axis: usize,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Mean(Var),
    Sum(Var),
    GraphAttention {
        z: Var,
        a_src: Var,
        a_dst: Var,
        layout: AttentionLayout,
        slope: f64,
        /// pre-activation scores, `[groups, heads, nodes, nodes]`
        scores: Vec<f64>,
        /// attention coefficients, same layout as `scores`
        alpha: Vec<f64>,
    },
}

/// How the rows and columns of a projected node matrix split into
/// independent graphs and attention heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionLayout {
    pub groups: usize,
    pub nodes: usize,
    pub heads: usize,
    pub head_dim: usize,
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Computation tape.
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
    param_order: Vec<(String, Var)>,
    dropout_rng: Option<ChaCha8Rng>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

/// Split of a shape around `axis` into (outer, axis length, inner).
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let len = shape[axis];
    let inner = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

fn leaky(u: f64, slope: f64) -> f64 {
    if u > 0.0 {
        u
    } else {
        slope * u
    }
}

impl Graph {
    /// Evaluation-mode graph: dropout is the identity.
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: HashMap::new(),
            param_order: Vec::new(),
            dropout_rng: None,
        }
    }

    /// Training-mode graph; dropout masks are drawn from `rng`.
    pub fn training(rng: ChaCha8Rng) -> Self {
        Graph {
            dropout_rng: Some(rng),
            ..Graph::new()
        }
    }

    pub fn is_training(&self) -> bool {
        self.dropout_rng.is_some()
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
        &self.nodes[v.0].value.shape
    }

    fn push(
        &mut self,
        op: &'static str,
        value: Tensor,
        node_op: Op,
        requires_grad: bool,
    ) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op });
        }
        self.nodes.push(Node {
            value,
            op: node_op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.push("constant", t, Op::Leaf, false)
    }

    /// Differentiable leaf that is not a named parameter.
    pub fn variable(&mut self, t: Tensor) -> Result<Var> {
        self.push("variable", t, Op::Leaf, true)
    }

    /// Binds a named parameter; repeated binds of the same name share one leaf.
    pub fn param(&mut self, name: &str, t: &Tensor) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let v = self.push("param", t.clone(), Op::Leaf, true)?;
        self.params.insert(name.to_string(), v);
        self.param_order.push((name.to_string(), v));
        Ok(v)
    }

    pub fn bound_params(&self) -> &[(String, Var)] {
        &self.param_order
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (Some((m, k)), Some((k2, n))) = (av.dims2(), bv.dims2()) else {
            return Err(Error::shape("matmul", &av.shape, &bv.shape));
        };
        if k != k2 {
            return Err(Error::shape("matmul", &av.shape, &bv.shape));
        }
        let out = Tensor::new(vec![m, n], matmul_raw(&av.data, &bv.data, m, k, n))?;
        let rg = self.rg(&[a, b]);
        self.push("matmul", out, Op::MatMul(a, b), rg)
    }

    /// `x · wᵀ + b` with `w` stored as `[out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let (Some((n, i)), Some((o, i2))) = (xv.dims2(), wv.dims2()) else {
            return Err(Error::shape("linear", &xv.shape, &wv.shape));
        };
        if i != i2 {
            return Err(Error::shape("linear", &xv.shape, &wv.shape));
        }
        let mut data = matmul_bt_raw(&xv.data, &wv.data, n, i, o);
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.shape != [o] {
                return Err(Error::shape("linear", &bv.shape, &[o]));
            }
            for row in data.chunks_mut(o) {
                for (r, bb) in row.iter_mut().zip(&bv.data) {
                    *r += bb;
                }
            }
        }
        let out = Tensor::new(vec![n, o], data)?;
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        self.push("linear", out, Op::Linear { x, w, b }, rg)
    }

    fn zip_op(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape != bv.shape {
            return Err(Error::shape(name, &av.shape, &bv.shape));
        }
        let data = av
            .data
            .iter()
            .zip(&bv.data)
            .map(|(x, y)| f(*x, *y))
            .collect();
        let out = Tensor::new(av.shape.clone(), data)?;
        let rg = self.rg(&[a, b]);
        self.push(name, out, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op("elementwise_mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let av = self.value(a);
        let out = Tensor::new(av.shape.clone(), av.data.iter().map(|x| x * c).collect())?;
        let rg = self.rg(&[a]);
        self.push("scale", out, Op::Scale(a, c), rg)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::InvalidArgument("concat of zero tensors".into()));
        };
        let base = self.value(first).shape.clone();
        if axis >= base.len() {
            return Err(Error::InvalidArgument(format!(
                "concat: axis {axis} out of range for shape {base:?}"
            )));
        }
        let mut shape = base.clone();
        shape[axis] = 0;
        for &p in parts {
            let s = &self.value(p).shape;
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
            shape[axis] += s[axis];
        }
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &p in parts {
                let pv = self.value(p);
                let chunk = pv.shape[axis] * inner;
                data.extend_from_slice(&pv.data[o * chunk..(o + 1) * chunk]);
            }
        }
        let out = Tensor::new(shape, data)?;
        let rg = self.rg(parts);
        self.push(
            "concat",
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        )
    }

    /// Selects rows of a 2-D tensor; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let Some((rows, cols)) = xv.dims2() else {
            return Err(Error::shape("gather_rows", &xv.shape, &[]));
        };
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &r in idx {
            if r >= rows {
                return Err(Error::InvalidArgument(format!(
                    "gather_rows: row {r} out of range for {rows} rows"
                )));
            }
            data.extend_from_slice(&xv.data[r * cols..(r + 1) * cols]);
        }
        let out = Tensor::new(vec![idx.len(), cols], data)?;
        let rg = self.rg(&[x]);
        self.push(
            "gather_rows",
            out,
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
            rg,
        )
    }

    fn map_op(
        &mut self,
        name: &'static str,
        x: Var,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let xv = self.value(x);
        let out = Tensor::new(xv.shape.clone(), xv.data.iter().map(|v| f(*v)).collect())?;
        let rg = self.rg(&[x]);
        self.push(name, out, op, rg)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.map_op(
            "leaky_relu",
            x,
            |v| leaky(v, slope),
            Op::LeakyRelu(x, slope),
        )
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.map_op("relu", x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.map_op("tanh", x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.map_op("sigmoid", x, sigmoid, Op::Sigmoid(x))
    }

    /// Normalizes over the last dimension, then applies `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let d = *xv
            .shape
            .last()
            .ok_or_else(|| Error::shape("layer_norm", &xv.shape, &[]))?;
        for p in [gamma, beta] {
            let s = &self.value(p).shape;
            if s.as_slice() != [d] {
                return Err(Error::shape("layer_norm", &xv.shape, s));
            }
        }
        let (g, b) = (&self.value(gamma).data, &self.value(beta).data);
        let rows = xv.numel() / d.max(1);
        let mut xhat = vec![0.0; xv.numel()];
        let mut inv_std = vec![0.0; rows];
        let mut data = vec![0.0; xv.numel()];
        for r in 0..rows {
            let row = &xv.data[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for c in 0..d {
                let h = (row[c] - mean) * is;
                xhat[r * d + c] = h;
                data[r * d + c] = h * g[c] + b[c];
            }
        }
        let out = Tensor::new(xv.shape.clone(), data)?;
        let rg = self.rg(&[x, gamma, beta]);
        self.push(
            "layer_norm",
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        )
    }

    fn check_axis(&self, name: &'static str, x: Var, axis: usize) -> Result<()> {
        let s = &self.value(x).shape;
        if axis >= s.len() {
            return Err(Error::InvalidArgument(format!(
                "{name}: axis {axis} out of range for shape {s:?}"
            )));
        }
        Ok(())
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("softmax", x, axis)?;
        let xv = self.value(x);
        let data = softmax_along(&xv.data, &xv.shape, axis, false);
        let out = Tensor::new(xv.shape.clone(), data)?;
        let rg = self.rg(&[x]);
        self.push("softmax", out, Op::Softmax { x, axis }, rg)
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("log_softmax", x, axis)?;
        let xv = self.value(x);
        let data = softmax_along(&xv.data, &xv.shape, axis, true);
        let out = Tensor::new(xv.shape.clone(), data)?;
        let rg = self.rg(&[x]);
        self.push("log_softmax", out, Op::LogSoftmax { x, axis }, rg)
    }

    /// Inverted dropout. Identity on an evaluation-mode graph or when `rate` is 0.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!(
                "dropout: rate {rate} outside [0, 1)"
            )));
        }
        let n = self.value(x).numel();
        let Some(rng) = self.dropout_rng.as_mut() else {
            return Ok(x);
        };
        if rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        self.dropout_with_mask(x, mask)
    }

    /// Dropout with an explicit, already scaled mask.
    pub fn dropout_with_mask(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        let xv = self.value(x);
        if mask.len() != xv.numel() {
            return Err(Error::shape("dropout", &xv.shape, &[mask.len()]));
        }
        let data = xv.data.iter().zip(&mask).map(|(a, m)| a * m).collect();
        let out = Tensor::new(xv.shape.clone(), data)?;
        let rg = self.rg(&[x]);
        self.push("dropout", out, Op::Dropout { x, mask }, rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.numel() == 0 {
            return Err(Error::InvalidArgument("mean of an empty tensor".into()));
        }
        let m = xv.data.iter().sum::<f64>() / xv.numel() as f64;
        let rg = self.rg(&[x]);
        self.push("mean", Tensor::scalar(m), Op::Mean(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data.iter().sum::<f64>();
        let rg = self.rg(&[x]);
        self.push("sum", Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Multi-head attention over fully connected node groups.
    ///
    /// `z` is `[groups·nodes, heads·head_dim]` (already projected); `a_src`
    /// and `a_dst` are `[heads, head_dim]`. For each group and head, row `i`
    /// of the output is `Σ_j α_ij z_j` with
    /// `α_ij = softmax_j(LeakyReLU(a_src·z_i + a_dst·z_j))`.
    pub fn graph_attention(
        &mut self,
        z: Var,
        a_src: Var,
        a_dst: Var,
        layout: AttentionLayout,
        slope: f64,
    ) -> Result<Var> {
        let AttentionLayout {
            groups,
            nodes,
            heads,
            head_dim,
        } = layout;
        let zv = self.value(z);
        let want = [groups * nodes, heads * head_dim];
        if zv.shape != want {
            return Err(Error::shape("graph_attention", &zv.shape, &want));
        }
        for a in [a_src, a_dst] {
            let s = &self.value(a).shape;
            if s.as_slice() != [heads, head_dim] {
                return Err(Error::shape("graph_attention", s, &[heads, head_dim]));
            }
        }
        let (src, dst) = (&self.value(a_src).data, &self.value(a_dst).data);
        let width = heads * head_dim;
        let zrow = |g: usize, i: usize, h: usize| {
            let start = (g * nodes + i) * width + h * head_dim;
            &zv.data[start..start + head_dim]
        };
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

        let mut scores = vec![0.0; groups * heads * nodes * nodes];
        let mut alpha = vec![0.0; scores.len()];
        let mut out = vec![0.0; zv.numel()];
        for g in 0..groups {
            for h in 0..heads {
                let a_s = &src[h * head_dim..(h + 1) * head_dim];
                let a_d = &dst[h * head_dim..(h + 1) * head_dim];
                let s: Vec<f64> = (0..nodes).map(|i| dot(a_s, zrow(g, i, h))).collect();
                let t: Vec<f64> = (0..nodes).map(|j| dot(a_d, zrow(g, j, h))).collect();
                let base = (g * heads + h) * nodes * nodes;
                for i in 0..nodes {
                    let row = base + i * nodes;
                    for j in 0..nodes {
                        scores[row + j] = s[i] + t[j];
                    }
                    let e: Vec<f64> = (0..nodes).map(|j| leaky(scores[row + j], slope)).collect();
                    let max = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let denom: f64 = e.iter().map(|v| (v - max).exp()).sum();
                    for j in 0..nodes {
                        alpha[row + j] = (e[j] - max).exp() / denom;
                    }
                    let orow = (g * nodes + i) * width + h * head_dim;
                    for j in 0..nodes {
                        let a = alpha[row + j];
                        for (o, zj) in out[orow..orow + head_dim].iter_mut().zip(zrow(g, j, h)) {
                            *o += a * zj;
                        }
                    }
                }
            }
        }
        let value = Tensor::new(want.to_vec(), out)?;
        let rg = self.rg(&[z, a_src, a_dst]);
        self.push(
            "graph_attention",
            value,
            Op::GraphAttention {
                z,
                a_src,
                a_dst,
                layout,
                slope,
                scores,
                alpha,
            },
            rg,
        )
    }

    /// Attention coefficients `[groups, heads, nodes, nodes]` recorded by a
    /// [`Graph::graph_attention`] node.
    pub fn attention_coefficients(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::GraphAttention { alpha, .. } => Some(alpha),
            _ => None,
        }
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar output, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &gy, &mut grads);
            grads[idx] = Some(gy);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let y = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k) = av.dims2().unwrap();
                let n = bv.shape[1];
                if wants(*a) {
                    accumulate(grads, *a, &matmul_bt_raw(gy, &bv.data, m, n, k));
                }
                if wants(*b) {
                    accumulate(grads, *b, &matmul_at_raw(&av.data, gy, m, k, n));
                }
            }
            Op::Linear { x, w, b } => {
                let (xv, wv) = (val(*x), val(*w));
                let (n, i) = xv.dims2().unwrap();
                let o = wv.shape[0];
                if wants(*x) {
                    accumulate(grads, *x, &matmul_raw(gy, &wv.data, n, o, i));
                }
                if wants(*w) {
                    accumulate(grads, *w, &matmul_at_raw(gy, &xv.data, n, o, i));
                }
                if let Some(b) = b {
                    if wants(*b) {
                        let mut gb = vec![0.0; o];
                        for row in gy.chunks(o) {
                            for (g, r) in gb.iter_mut().zip(row) {
                                *g += r;
                            }
                        }
                        accumulate(grads, *b, &gb);
                    }
                }
            }
            Op::Add(a, b) => {
                accumulate_if(grads, wants(*a), *a, gy);
                accumulate_if(grads, wants(*b), *b, gy);
            }
            Op::Sub(a, b) => {
                accumulate_if(grads, wants(*a), *a, gy);
                if wants(*b) {
                    let neg: Vec<f64> = gy.iter().map(|g| -g).collect();
                    accumulate(grads, *b, &neg);
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let g: Vec<f64> = gy.iter().zip(&val(*b).data).map(|(g, v)| g * v).collect();
                    accumulate(grads, *a, &g);
                }
                if wants(*b) {
                    let g: Vec<f64> = gy.iter().zip(&val(*a).data).map(|(g, v)| g * v).collect();
                    accumulate(grads, *b, &g);
                }
            }
            Op::Scale(a, c) => {
                let g: Vec<f64> = gy.iter().map(|g| g * c).collect();
                accumulate(grads, *a, &g);
            }
            Op::Concat { parts, axis } => {
                let (outer, _, inner) = axis_split(&y.shape, *axis);
                let total = y.shape[*axis] * inner;
                let mut offset = 0;
                for &p in parts {
                    let chunk = val(p).shape[*axis] * inner;
                    if wants(p) {
                        let mut g = Vec::with_capacity(chunk * outer);
                        for o in 0..outer {
                            let start = o * total + offset;
                            g.extend_from_slice(&gy[start..start + chunk]);
                        }
                        accumulate(grads, p, &g);
                    }
                    offset += chunk;
                }
            }
            Op::GatherRows { x, idx } => {
                let xv = val(*x);
                let cols = xv.shape[1];
                let mut g = vec![0.0; xv.numel()];
                for (k, &r) in idx.iter().enumerate() {
                    for c in 0..cols {
                        g[r * cols + c] += gy[k * cols + c];
                    }
                }
                accumulate(grads, *x, &g);
            }
            Op::LeakyRelu(x, slope) => {
                let g: Vec<f64> = gy
                    .iter()
                    .zip(&val(*x).data)
                    .map(|(g, v)| if *v > 0.0 { *g } else { g * slope })
                    .collect();
                accumulate(grads, *x, &g);
            }
            Op::Relu(x) => {
                let g: Vec<f64> = gy
                    .iter()
                    .zip(&val(*x).data)
                    .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                    .collect();
                accumulate(grads, *x, &g);
            }
            Op::Tanh(x) => {
                let g: Vec<f64> = gy
                    .iter()
                    .zip(&y.data)
                    .map(|(g, t)| g * (1.0 - t * t))
                    .collect();
                accumulate(grads, *x, &g);
            }
            Op::Sigmoid(x) => {
                let g: Vec<f64> = gy
                    .iter()
                    .zip(&y.data)
                    .map(|(g, s)| g * s * (1.0 - s))
                    .collect();
                accumulate(grads, *x, &g);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gv = &val(*gamma).data;
                let d = gv.len();
                if wants(*gamma) || wants(*beta) {
                    let mut gg = vec![0.0; d];
                    let mut gb = vec![0.0; d];
                    for (k, g) in gy.iter().enumerate() {
                        gg[k % d] += g * xhat[k];
                        gb[k % d] += g;
                    }
                    accumulate_if(grads, wants(*gamma), *gamma, &gg);
                    accumulate_if(grads, wants(*beta), *beta, &gb);
                }
                if wants(*x) {
                    let mut gx = vec![0.0; gy.len()];
                    for (r, is) in inv_std.iter().enumerate() {
                        let span = r * d..(r + 1) * d;
                        let dh: Vec<f64> = gy[span.clone()]
                            .iter()
                            .zip(gv)
                            .map(|(g, w)| g * w)
                            .collect();
                        let xh = &xhat[span.clone()];
                        let mean_dh = dh.iter().sum::<f64>() / d as f64;
                        let mean_dhx =
                            dh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for c in 0..d {
                            gx[r * d + c] = is * (dh[c] - mean_dh - xh[c] * mean_dhx);
                        }
                    }
                    accumulate(grads, *x, &gx);
                }
            }
            Op::Softmax { x, axis } => {
                let (outer, len, inner) = axis_split(&y.shape, *axis);
                let mut g = vec![0.0; gy.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| o * len * inner + k * inner + i;
                        let dot: f64 = (0..len).map(|k| gy[at(k)] * y.data[at(k)]).sum();
                        for k in 0..len {
                            g[at(k)] = y.data[at(k)] * (gy[at(k)] - dot);
                        }
                    }
                }
                accumulate(grads, *x, &g);
            }
            Op::LogSoftmax { x, axis } => {
                let (outer, len, inner) = axis_split(&y.shape, *axis);
                let mut g = vec![0.0; gy.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| o * len * inner + k * inner + i;
                        let total: f64 = (0..len).map(|k| gy[at(k)]).sum();
                        for k in 0..len {
                            g[at(k)] = gy[at(k)] - y.data[at(k)].exp() * total;
                        }
                    }
                }
                accumulate(grads, *x, &g);
            }
            Op::Dropout { x, mask } => {
                let g: Vec<f64> = gy.iter().zip(mask).map(|(g, m)| g * m).collect();
                accumulate(grads, *x, &g);
            }
            Op::Mean(x) => {
                let n = val(*x).numel();
                accumulate(grads, *x, &vec![gy[0] / n as f64; n]);
            }
            Op::Sum(x) => {
                let n = val(*x).numel();
                accumulate(grads, *x, &vec![gy[0]; n]);
            }
            Op::GraphAttention {
                z,
                a_src,
                a_dst,
                layout,
                slope,
                scores,
                alpha,
            } => {
                let AttentionLayout {
                    groups,
                    nodes,
                    heads,
                    head_dim,
                } = *layout;
                let width = heads * head_dim;
                let zv = &val(*z).data;
                let (src, dst) = (&val(*a_src).data, &val(*a_dst).data);
                let mut gz = vec![0.0; zv.len()];
                let mut gsrc = vec![0.0; src.len()];
                let mut gdst = vec![0.0; dst.len()];
                let at = |g: usize, i: usize, h: usize| (g * nodes + i) * width + h * head_dim;
                for g in 0..groups {
                    for h in 0..heads {
                        let base = (g * heads + h) * nodes * nodes;
                        let mut ds = vec![0.0; nodes];
                        let mut dt = vec![0.0; nodes];
                        for i in 0..nodes {
                            let row = base + i * nodes;
                            let go = &gy[at(g, i, h)..at(g, i, h) + head_dim];
                            // dα_ij = ∂L/∂out_i · z_j
                            let dalpha: Vec<f64> = (0..nodes)
                                .map(|j| {
                                    let zj = &zv[at(g, j, h)..at(g, j, h) + head_dim];
                                    go.iter().zip(zj).map(|(a, b)| a * b).sum()
                                })
                                .collect();
                            for j in 0..nodes {
                                let a = alpha[row + j];
                                let zj = at(g, j, h);
                                for c in 0..head_dim {
                                    gz[zj + c] += a * go[c];
                                }
                            }
                            let weighted: f64 =
                                (0..nodes).map(|j| alpha[row + j] * dalpha[j]).sum();
                            for j in 0..nodes {
                                let de = alpha[row + j] * (dalpha[j] - weighted);
                                let du = if scores[row + j] > 0.0 {
                                    de
                                } else {
                                    de * slope
                                };
                                ds[i] += du;
                                dt[j] += du;
                            }
                        }
                        let a_s = &src[h * head_dim..(h + 1) * head_dim];
                        let a_d = &dst[h * head_dim..(h + 1) * head_dim];
                        for i in 0..nodes {
                            let zi = at(g, i, h);
                            for c in 0..head_dim {
                                gz[zi + c] += ds[i] * a_s[c] + dt[i] * a_d[c];
                                gsrc[h * head_dim + c] += ds[i] * zv[zi + c];
                                gdst[h * head_dim + c] += dt[i] * zv[zi + c];
                            }
                        }
                    }
                }
                accumulate_if(grads, wants(*z), *z, &gz);
                accumulate_if(grads, wants(*a_src), *a_src, &gsrc);
                accumulate_if(grads, wants(*a_dst), *a_dst, &gdst);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g.to_vec()),
    }
}

fn accumulate_if(grads: &mut [Option<Vec<f64>>], cond: bool, v: Var, g: &[f64]) {
    if cond {
        accumulate(grads, v, g);
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Max-shifted softmax (or log-softmax) along `axis`.
pub(crate) fn softmax_along(data: &[f64], shape: &[usize], axis: usize, log: bool) -> Vec<f64> {
    let (outer, len, inner) = axis_split(shape, axis);
    let mut out = vec![0.0; data.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| o * len * inner + k * inner + i;
            let max = (0..len)
                .map(|k| data[at(k)])
                .fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = (0..len).map(|k| (data[at(k)] - max).exp()).sum();
            let log_denom = denom.ln();
            for k in 0..len {
                let shifted = data[at(k)] - max;
                out[at(k)] = if log {
                    shifted - log_denom
                } else {
                    shifted.exp() / denom
                };
            }
        }
    }
    out
}

/// Gradients from one backward sweep.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of `v`; `None` when no path reaches it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradients of every named parameter bound on `graph`; unreached
    /// parameters get zeros.
    pub fn by_name(&self, graph: &Graph) -> BTreeMap<String, Vec<f64>> {
        graph
            .bound_params()
            .iter()
            .map(|(name, v)| {
                let g = self
                    .get(*v)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; graph.value(*v).numel()]);
                (name.clone(), g)
            })
            .collect()
    }
}
