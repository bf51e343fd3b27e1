//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation appends a node holding its forward value; `backward` walks
//! the tape once in reverse. Tensors are treated as 2-D `[rows × cols]`
//! matrices (a 1-D tensor is a single row).

use super::tensor::{gemm, gemm_nt, gemm_tn, Tensor};
use crate::error::{Error, Result};

/// Added to the variance before the square root in layer norm.
pub const LAYER_NORM_EPS: f64 = 1e-6;
/// Predictions are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` inside BCE.
pub const BCE_CLAMP: f64 = 1e-7;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    MulRow(NodeId, NodeId),
    Scale(NodeId, f64),
    Gelu(NodeId),
    Sigmoid(NodeId),
    SoftmaxRows(NodeId),
    LogSoftmaxRows(NodeId),
    /// Saved per-row inverse standard deviations in `Node::aux`.
    LayerNormRows(NodeId),
    /// Saved per-row norms in `Node::aux`.
    L2NormalizeRows(NodeId),
    SliceCols(NodeId, usize),
    ConcatCols(Vec<NodeId>),
    SliceRows(NodeId, usize),
    ConcatRows(Vec<NodeId>),
    GatherRows(NodeId, Vec<usize>),
    ScatterRows { kept: NodeId, fill: NodeId, positions: Vec<usize> },
    MeanRows(NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    PickMean(NodeId, Vec<(usize, usize)>),
    Bce(NodeId, Vec<f64>),
    SumSqDiff(NodeId, Vec<f64>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    aux: Vec<f64>,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn dims(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

fn mat(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
    Tensor::new(vec![rows, cols], data).expect("internal shape bookkeeping")
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.push_aux(value, op, requires_grad, Vec::new())
    }

    fn push_aux(&mut self, value: Tensor, op: Op, requires_grad: bool, aux: Vec<f64>) -> NodeId {
        self.nodes.push(Node { value, op, requires_grad, aux });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf whose gradient is collected by `backward`.
    pub fn variable(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        dims(self.value(id))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(Error::shape(format!("matmul of [{m}×{k}] and [{k2}×{n}]")));
        }
        let mut out = vec![0.0; m * n];
        gemm(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(mat(m, n, out), Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, x: NodeId) -> NodeId {
        let (r, c) = self.shape(x);
        let src = self.value(x).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let rg = self.rg(&[x]);
        self.push(mat(c, r, out), Op::Transpose(x), rg)
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<(usize, usize)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(format!("{what} of [{}×{}] and [{}×{}]", sa.0, sa.1, sb.0, sb.1)));
        }
        Ok(sa)
    }

    fn zip_with(&mut self, a: NodeId, b: NodeId, what: &str, f: fn(f64, f64) -> f64, op: Op) -> Result<NodeId> {
        let (r, c) = self.same_shape(a, b, what)?;
        let out = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(mat(r, c, out), op, rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    fn broadcast_row(&mut self, x: NodeId, row: NodeId, what: &str, f: fn(f64, f64) -> f64, op: Op) -> Result<NodeId> {
        let (r, c) = self.shape(x);
        if self.value(row).len() != c {
            return Err(Error::shape(format!("{what}: row of {} values for [{r}×{c}]", self.value(row).len())));
        }
        let rv = self.value(row).data();
        let out = self.value(x).data().chunks(c).flat_map(|xr| xr.iter().zip(rv).map(|(&a, &b)| f(a, b))).collect();
        let rg = self.rg(&[x, row]);
        Ok(self.push(mat(r, c, out), op, rg))
    }

    /// `x + row`, broadcasting a `[1×n]` row over every row of `x`.
    pub fn add_row(&mut self, x: NodeId, row: NodeId) -> Result<NodeId> {
        self.broadcast_row(x, row, "add_row", |a, b| a + b, Op::AddRow(x, row))
    }

    pub fn mul_row(&mut self, x: NodeId, row: NodeId) -> Result<NodeId> {
        self.broadcast_row(x, row, "mul_row", |a, b| a * b, Op::MulRow(x, row))
    }

    pub fn scale(&mut self, x: NodeId, s: f64) -> NodeId {
        let (r, c) = self.shape(x);
        let out = self.value(x).data().iter().map(|v| v * s).collect();
        let rg = self.rg(&[x]);
        self.push(mat(r, c, out), Op::Scale(x, s), rg)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let (r, c) = self.shape(x);
        let out = self
            .value(x)
            .data()
            .iter()
            .map(|&v| 0.5 * v * (1.0 + (GELU_C * (v + GELU_A * v * v * v)).tanh()))
            .collect();
        let rg = self.rg(&[x]);
        self.push(mat(r, c, out), Op::Gelu(x), rg)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let (r, c) = self.shape(x);
        let out = self.value(x).data().iter().map(|&v| sigmoid(v)).collect();
        let rg = self.rg(&[x]);
        self.push(mat(r, c, out), Op::Sigmoid(x), rg)
    }

    pub fn softmax_rows(&mut self, x: NodeId) -> NodeId {
        let (r, c) = self.shape(x);
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(c) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let rg = self.rg(&[x]);
        self.push(mat(r, c, out), Op::SoftmaxRows(x), rg)
    }

    pub fn log_softmax_rows(&mut self, x: NodeId) -> NodeId {
        let (r, c) = self.shape(x);
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(c) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let rg = self.rg(&[x]);
        self.push(mat(r, c, out), Op::LogSoftmaxRows(x), rg)
    }

    /// Per-row standardization without scale/shift.
    pub fn layer_norm_rows(&mut self, x: NodeId) -> NodeId {
        let (r, c) = self.shape(x);
        let mut out = self.value(x).data().to_vec();
        let mut inv = Vec::with_capacity(r);
        for row in out.chunks_mut(c) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * s;
            }
            inv.push(s);
        }
        let rg = self.rg(&[x]);
        self.push_aux(mat(r, c, out), Op::LayerNormRows(x), rg, inv)
    }

    pub fn l2_normalize_rows(&mut self, x: NodeId) -> NodeId {
        let (r, c) = self.shape(x);
        let mut out = self.value(x).data().to_vec();
        let mut norms = Vec::with_capacity(r);
        for row in out.chunks_mut(c) {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            for v in row.iter_mut() {
                *v /= n;
            }
            norms.push(n);
        }
        let rg = self.rg(&[x]);
        self.push_aux(mat(r, c, out), Op::L2NormalizeRows(x), rg, norms)
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (r, c) = self.shape(x);
        if len == 0 || start + len > c {
            return Err(Error::shape(format!("column slice {start}..{} of {c} columns", start + len)));
        }
        let src = self.value(x).data();
        let out = (0..r).flat_map(|i| src[i * c + start..i * c + start + len].iter().copied()).collect();
        let rg = self.rg(&[x]);
        Ok(self.push(mat(r, len, out), Op::SliceCols(x, start), rg))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let r = self.shape(parts[0]).0;
        if parts.iter().any(|&p| self.shape(p).0 != r) {
            return Err(Error::shape("concat_cols with differing row counts"));
        }
        let c: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(mat(r, c, out), Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (r, c) = self.shape(x);
        if len == 0 || start + len > r {
            return Err(Error::shape(format!("row slice {start}..{} of {r} rows", start + len)));
        }
        let out = self.value(x).data()[start * c..(start + len) * c].to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(mat(len, c, out), Op::SliceRows(x, start), rg))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let c = self.shape(parts[0]).1;
        if parts.iter().any(|&p| self.shape(p).1 != c) {
            return Err(Error::shape("concat_rows with differing column counts"));
        }
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let r = out.len() / c;
        let rg = self.rg(parts);
        Ok(self.push(mat(r, c, out), Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn gather_rows(&mut self, x: NodeId, idx: &[usize]) -> Result<NodeId> {
        let (r, _) = self.shape(x);
        if idx.is_empty() || idx.iter().any(|&i| i >= r) {
            return Err(Error::shape(format!("gather of {idx:?} from {r} rows")));
        }
        let v = self.value(x).select_rows(idx);
        let rg = self.rg(&[x]);
        Ok(self.push(v, Op::GatherRows(x, idx.to_vec()), rg))
    }

    /// Builds an `n_total`-row sequence: row `positions[i]` is row `i` of
    /// `kept`, every other row is a copy of the `[1×c]` `fill` row.
    pub fn scatter_rows(&mut self, kept: NodeId, fill: NodeId, positions: &[usize], n_total: usize) -> Result<NodeId> {
        let (k, c) = self.shape(kept);
        if k != positions.len() {
            return Err(Error::shape(format!("{k} kept rows for {} positions", positions.len())));
        }
        if self.value(fill).len() != c {
            return Err(Error::shape("fill row width differs from kept rows"));
        }
        let mut seen = vec![false; n_total];
        for &p in positions {
            if p >= n_total || seen[p] {
                return Err(Error::shape(format!("bad scatter position {p} for {n_total} rows")));
            }
            seen[p] = true;
        }
        let fill_row = self.value(fill).data();
        let mut out = Vec::with_capacity(n_total * c);
        for _ in 0..n_total {
            out.extend_from_slice(fill_row);
        }
        for (i, &p) in positions.iter().enumerate() {
            out[p * c..(p + 1) * c].copy_from_slice(self.value(kept).row(i));
        }
        let rg = self.rg(&[kept, fill]);
        Ok(self.push(mat(n_total, c, out), Op::ScatterRows { kept, fill, positions: positions.to_vec() }, rg))
    }

    /// Mean over rows: `[m×n] → [1×n]`.
    pub fn mean_rows(&mut self, x: NodeId) -> NodeId {
        let (r, c) = self.shape(x);
        let mut out = vec![0.0; c];
        for row in self.value(x).data().chunks(c) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        for o in out.iter_mut() {
            *o /= r as f64;
        }
        let rg = self.rg(&[x]);
        self.push(mat(1, c, out), Op::MeanRows(x), rg)
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::SumAll(x), rg)
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::MeanAll(x), rg)
    }

    /// Mean of the selected `(row, col)` entries.
    pub fn pick_mean(&mut self, x: NodeId, picks: &[(usize, usize)]) -> Result<NodeId> {
        let (r, c) = self.shape(x);
        if picks.is_empty() || picks.iter().any(|&(i, j)| i >= r || j >= c) {
            return Err(Error::shape("pick outside tensor"));
        }
        let v = self.value(x);
        let s = picks.iter().map(|&(i, j)| v.at(i, j)).sum::<f64>() / picks.len() as f64;
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::scalar(s), Op::PickMean(x, picks.to_vec()), rg))
    }

    /// Mean binary cross-entropy of probabilities `p` against fixed targets.
    pub fn bce(&mut self, p: NodeId, target: &[f64]) -> Result<NodeId> {
        let v = self.value(p);
        if v.len() != target.len() {
            return Err(Error::shape(format!("bce: {} predictions, {} targets", v.len(), target.len())));
        }
        let n = target.len() as f64;
        let s = v
            .data()
            .iter()
            .zip(target)
            .map(|(&q, &y)| {
                let q = q.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                -(y * q.ln() + (1.0 - y) * (1.0 - q).ln())
            })
            .sum::<f64>()
            / n;
        let rg = self.rg(&[p]);
        Ok(self.push(Tensor::scalar(s), Op::Bce(p, target.to_vec()), rg))
    }

    /// `Σ (x − target)²` against a fixed target.
    pub fn sum_sq_diff(&mut self, x: NodeId, target: &[f64]) -> Result<NodeId> {
        let v = self.value(x);
        if v.len() != target.len() {
            return Err(Error::shape(format!("sum_sq_diff: {} values, {} targets", v.len(), target.len())));
        }
        let s = v.data().iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::scalar(s), Op::SumSqDiff(x, target.to_vec()), rg))
    }

    /// Reverse pass from a scalar. Gradients are readable through [`Graph::grad`]
    /// until the next call.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::contract(format!("backward from non-scalar of shape {:?}", self.value(loss).shape())));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    /// Copy of a node's value with its gradient attached (zeros if unreachable).
    pub fn tensor_with_grad(&self, id: NodeId) -> Tensor {
        let mut t = self.value(id).clone();
        let g = self.grad(id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]);
        t.set_grad(g);
        t
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let nodes = &self.nodes;
        let val = |id: NodeId| &nodes[id.0].value;
        let (_, cols) = dims(&node.value);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = dims(val(*a));
                let n = dims(val(*b)).1;
                let (av, bv) = (val(*a).data(), val(*b).data());
                if let Some(ga) = acc(nodes, grads, *a) {
                    gemm_nt(g, bv, ga, m, n, k);
                }
                if let Some(gb) = acc(nodes, grads, *b) {
                    gemm_tn(av, g, gb, m, k, n);
                }
            }
            Op::Transpose(x) => {
                if let Some(gx) = acc(nodes, grads, *x) {
                    let (r, c) = dims(val(*x));
                    for p in 0..r {
                        for q in 0..c {
                            gx[p * c + q] += g[q * r + p];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for id in [*a, *b] {
                    if let Some(gx) = acc(nodes, grads, id) {
                        add_into(gx, g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = acc(nodes, grads, *a) {
                    add_into(ga, g);
                }
                if let Some(gb) = acc(nodes, grads, *b) {
                    gb.iter_mut().zip(g).for_each(|(o, v)| *o -= v);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a).data(), val(*b).data());
                if let Some(ga) = acc(nodes, grads, *a) {
                    ga.iter_mut().zip(g.iter().zip(bv)).for_each(|(o, (gv, y))| *o += gv * y);
                }
                if let Some(gb) = acc(nodes, grads, *b) {
                    gb.iter_mut().zip(g.iter().zip(av)).for_each(|(o, (gv, x))| *o += gv * x);
                }
            }
            Op::AddRow(x, row) => {
                if let Some(gx) = acc(nodes, grads, *x) {
                    add_into(gx, g);
                }
                if let Some(gr) = acc(nodes, grads, *row) {
                    for grow in g.chunks(cols) {
                        add_into(gr, grow);
                    }
                }
            }
            Op::MulRow(x, row) => {
                let (xv, rv) = (val(*x).data(), val(*row).data());
                if let Some(gx) = acc(nodes, grads, *x) {
                    for (gxr, grow) in gx.chunks_mut(cols).zip(g.chunks(cols)) {
                        for ((o, gv), r) in gxr.iter_mut().zip(grow).zip(rv) {
                            *o += gv * r;
                        }
                    }
                }
                if let Some(gr) = acc(nodes, grads, *row) {
                    for (grow, xrow) in g.chunks(cols).zip(xv.chunks(cols)) {
                        for ((o, gv), xv) in gr.iter_mut().zip(grow).zip(xrow) {
                            *o += gv * xv;
                        }
                    }
                }
            }
            Op::Scale(x, s) => {
                if let Some(gx) = acc(nodes, grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(o, v)| *o += v * s);
                }
            }
            Op::Gelu(x) => {
                let xv = val(*x).data();
                if let Some(gx) = acc(nodes, grads, *x) {
                    for ((o, gv), &v) in gx.iter_mut().zip(g).zip(xv) {
                        let t = (GELU_C * (v + GELU_A * v * v * v)).tanh();
                        let d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * v * v);
                        *o += gv * d;
                    }
                }
            }
            Op::Sigmoid(x) => {
                let yv = node.value.data();
                if let Some(gx) = acc(nodes, grads, *x) {
                    for ((o, gv), y) in gx.iter_mut().zip(g).zip(yv) {
                        *o += gv * y * (1.0 - y);
                    }
                }
            }
            Op::SoftmaxRows(x) => {
                let yv = node.value.data();
                if let Some(gx) = acc(nodes, grads, *x) {
                    for ((gxr, grow), yrow) in gx.chunks_mut(cols).zip(g.chunks(cols)).zip(yv.chunks(cols)) {
                        let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for ((o, gv), y) in gxr.iter_mut().zip(grow).zip(yrow) {
                            *o += y * (gv - dot);
                        }
                    }
                }
            }
            Op::LogSoftmaxRows(x) => {
                let yv = node.value.data();
                if let Some(gx) = acc(nodes, grads, *x) {
                    for ((gxr, grow), yrow) in gx.chunks_mut(cols).zip(g.chunks(cols)).zip(yv.chunks(cols)) {
                        let gsum: f64 = grow.iter().sum();
                        for ((o, gv), y) in gxr.iter_mut().zip(grow).zip(yrow) {
                            *o += gv - y.exp() * gsum;
                        }
                    }
                }
            }
            Op::LayerNormRows(x) => {
                let yv = node.value.data();
                let n = cols as f64;
                if let Some(gx) = acc(nodes, grads, *x) {
                    for (((gxr, grow), yrow), inv) in
                        gx.chunks_mut(cols).zip(g.chunks(cols)).zip(yv.chunks(cols)).zip(&node.aux)
                    {
                        let gsum: f64 = grow.iter().sum();
                        let gy: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for ((o, gv), y) in gxr.iter_mut().zip(grow).zip(yrow) {
                            *o += inv / n * (n * gv - gsum - y * gy);
                        }
                    }
                }
            }
            Op::L2NormalizeRows(x) => {
                let yv = node.value.data();
                if let Some(gx) = acc(nodes, grads, *x) {
                    for (((gxr, grow), yrow), norm) in
                        gx.chunks_mut(cols).zip(g.chunks(cols)).zip(yv.chunks(cols)).zip(&node.aux)
                    {
                        let gy: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for ((o, gv), y) in gxr.iter_mut().zip(grow).zip(yrow) {
                            *o += (gv - y * gy) / norm;
                        }
                    }
                }
            }
            Op::SliceCols(x, start) => {
                let src_cols = dims(val(*x)).1;
                if let Some(gx) = acc(nodes, grads, *x) {
                    for (r, grow) in g.chunks(cols).enumerate() {
                        add_into(&mut gx[r * src_cols + start..r * src_cols + start + cols], grow);
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pc = dims(val(p)).1;
                    if let Some(gp) = acc(nodes, grads, p) {
                        for (r, gpr) in gp.chunks_mut(pc).enumerate() {
                            add_into(gpr, &g[r * cols + offset..r * cols + offset + pc]);
                        }
                    }
                    offset += pc;
                }
            }
            Op::SliceRows(x, start) => {
                if let Some(gx) = acc(nodes, grads, *x) {
                    add_into(&mut gx[start * cols..start * cols + g.len()], g);
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = val(p).len();
                    if let Some(gp) = acc(nodes, grads, p) {
                        add_into(gp, &g[offset..offset + n]);
                    }
                    offset += n;
                }
            }
            Op::GatherRows(x, idx) => {
                if let Some(gx) = acc(nodes, grads, *x) {
                    for (grow, &i) in g.chunks(cols).zip(idx) {
                        add_into(&mut gx[i * cols..(i + 1) * cols], grow);
                    }
                }
            }
            Op::ScatterRows { kept, fill, positions } => {
                if let Some(gk) = acc(nodes, grads, *kept) {
                    for (i, &p) in positions.iter().enumerate() {
                        add_into(&mut gk[i * cols..(i + 1) * cols], &g[p * cols..(p + 1) * cols]);
                    }
                }
                if let Some(gf) = acc(nodes, grads, *fill) {
                    let n_total = g.len() / cols;
                    let mut is_kept = vec![false; n_total];
                    positions.iter().for_each(|&p| is_kept[p] = true);
                    for (p, grow) in g.chunks(cols).enumerate() {
                        if !is_kept[p] {
                            add_into(gf, grow);
                        }
                    }
                }
            }
            Op::MeanRows(x) => {
                let r = dims(val(*x)).0 as f64;
                if let Some(gx) = acc(nodes, grads, *x) {
                    for gxr in gx.chunks_mut(cols) {
                        gxr.iter_mut().zip(g).for_each(|(o, v)| *o += v / r);
                    }
                }
            }
            Op::SumAll(x) => {
                if let Some(gx) = acc(nodes, grads, *x) {
                    gx.iter_mut().for_each(|o| *o += g[0]);
                }
            }
            Op::MeanAll(x) => {
                if let Some(gx) = acc(nodes, grads, *x) {
                    let n = gx.len() as f64;
                    gx.iter_mut().for_each(|o| *o += g[0] / n);
                }
            }
            Op::PickMean(x, picks) => {
                let xc = dims(val(*x)).1;
                if let Some(gx) = acc(nodes, grads, *x) {
                    let w = g[0] / picks.len() as f64;
                    for &(r, c) in picks {
                        gx[r * xc + c] += w;
                    }
                }
            }
            Op::Bce(p, target) => {
                let pv = val(*p).data();
                if let Some(gp) = acc(nodes, grads, *p) {
                    let n = target.len() as f64;
                    for ((o, &q), &y) in gp.iter_mut().zip(pv).zip(target) {
                        if q > BCE_CLAMP && q < 1.0 - BCE_CLAMP {
                            *o += g[0] * (-y / q + (1.0 - y) / (1.0 - q)) / n;
                        }
                    }
                }
            }
            Op::SumSqDiff(x, target) => {
                let xv = val(*x).data();
                if let Some(gx) = acc(nodes, grads, *x) {
                    for ((o, a), b) in gx.iter_mut().zip(xv).zip(target) {
                        *o += g[0] * 2.0 * (a - b);
                    }
                }
            }
        }
    }
}

fn acc<'g>(nodes: &[Node], grads: &'g mut [Option<Vec<f64>>], id: NodeId) -> Option<&'g mut Vec<f64>> {
    if !nodes[id.0].requires_grad {
        return None;
    }
    let n = nodes[id.0].value.len();
    Some(grads[id.0].get_or_insert_with(|| vec![0.0; n]))
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
