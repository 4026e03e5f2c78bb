//! Define-by-run reverse-mode automatic differentiation on f64 arrays.
//!
//! A `Graph` records every operation as it executes, so the recorded tape is
//! already in topological order. `backward` walks it in reverse and
//! accumulates a gradient for every node. Graphs are cheap and are meant to
//! be rebuilt from scratch for every training step.

use crate::error::{Error, Result};
use crate::ndgrad::array::{
    log_sum_exp, matmul, matmul_nt_acc, matmul_tn_acc, row_softmax, transpose, Array,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    /// Adds a width-m vector to every row of an [n, m] matrix.
    AddRow(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Scale(NodeId, f64),
    AddConst(NodeId),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    RowSoftmax(NodeId),
    MaxZero(NodeId),
    Gather {
        table: NodeId,
        ids: Vec<usize>,
    },
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    SliceCols {
        input: NodeId,
        start: usize,
    },
    Sum(NodeId),
    Mean(NodeId),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    },
    /// Summed token cross entropy straight from logits; rows with a false
    /// mask entry contribute nothing, to value or gradient.
    CrossEntropy {
        logits: NodeId,
        targets: Vec<usize>,
        mask: Vec<bool>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::AddConst(..) => "add_const",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::RowSoftmax(..) => "row_softmax",
            Op::MaxZero(..) => "max_zero",
            Op::Gather { .. } => "gather",
            Op::ConcatCols(..) => "concat_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::LayerNorm { .. } => "layer_norm",
            Op::CrossEntropy { .. } => "cross_entropy_logits",
        }
    }
}

struct Node {
    op: Op,
    value: Array,
}

/// Gradient table produced by [`Graph::backward`]. Nodes that do not lie on
/// a path to the loss keep an all-zero gradient.
pub struct Gradients {
    grads: Vec<Array>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> &Array {
        &self.grads[id.0]
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn value(&self, id: NodeId) -> &Array {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Array) -> Result<NodeId> {
        if !value.all_finite() {
            return Err(Error::NonFinite {
                context: format!("{} produced a non-finite value", op.name()),
            });
        }
        self.nodes.push(Node { op, value });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn shape_err(op: &'static str, details: String) -> Error {
        Error::ShapeMismatch { op, details }
    }

    pub fn leaf(&mut self, value: Array) -> Result<NodeId> {
        self.push(Op::Leaf, value)
    }

    pub fn scalar_leaf(&mut self, v: f64) -> Result<NodeId> {
        self.leaf(Array::scalar(v))
    }

    fn require_same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (va, vb) = (self.value(a), self.value(b));
        if !va.same_shape(vb) {
            return Err(Self::shape_err(
                op,
                format!("operands have shapes {:?} and {:?}", va.shape(), vb.shape()),
            ));
        }
        Ok(())
    }

    fn require_rank2(&self, op: &'static str, a: NodeId) -> Result<()> {
        if self.value(a).rank() != 2 {
            return Err(Self::shape_err(
                op,
                format!("expected rank-2 operand, got shape {:?}", self.value(a).shape()),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.require_same_shape("add", a, b)?;
        let mut out = self.value(a).clone();
        for (o, &v) in out.data_mut().iter_mut().zip(self.nodes[b.0].value.data()) {
            *o += v;
        }
        self.push(Op::Add(a, b), out)
    }

    pub fn add_row(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.require_rank2("add_row", a)?;
        let m = self.value(a).ncols();
        if self.value(b).len() != m || self.value(b).rank() > 2 || self.value(b).nrows() != 1 {
            return Err(Self::shape_err(
                "add_row",
                format!(
                    "matrix shape {:?} needs a width-{} row vector, got {:?}",
                    self.value(a).shape(),
                    m,
                    self.value(b).shape()
                ),
            ));
        }
        let mut out = self.value(a).clone();
        let n = out.nrows();
        for i in 0..n {
            let row = out.row_mut(i);
            for (o, &v) in row.iter_mut().zip(self.nodes[b.0].value.data()) {
                *o += v;
            }
        }
        self.push(Op::AddRow(a, b), out)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.require_same_shape("sub", a, b)?;
        let mut out = self.value(a).clone();
        for (o, &v) in out.data_mut().iter_mut().zip(self.nodes[b.0].value.data()) {
            *o -= v;
        }
        self.push(Op::Sub(a, b), out)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.require_same_shape("mul", a, b)?;
        let mut out = self.value(a).clone();
        for (o, &v) in out.data_mut().iter_mut().zip(self.nodes[b.0].value.data()) {
            *o *= v;
        }
        self.push(Op::Mul(a, b), out)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.require_same_shape("div", a, b)?;
        let mut out = self.value(a).clone();
        for (o, &v) in out.data_mut().iter_mut().zip(self.nodes[b.0].value.data()) {
            *o /= v;
        }
        self.push(Op::Div(a, b), out)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let mut out = self.value(a).clone();
        for o in out.data_mut() {
            *o *= c;
        }
        self.push(Op::Scale(a, c), out)
    }

    pub fn add_const(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let mut out = self.value(a).clone();
        for o in out.data_mut() {
            *o += c;
        }
        self.push(Op::AddConst(a), out)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.require_rank2("matmul", a)?;
        self.require_rank2("matmul", b)?;
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.nrows() {
            return Err(Self::shape_err(
                "matmul",
                format!("inner dimensions differ: {:?} x {:?}", va.shape(), vb.shape()),
            ));
        }
        let out = matmul(va, vb);
        self.push(Op::MatMul(a, b), out)
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        self.require_rank2("transpose", a)?;
        let out = transpose(self.value(a));
        self.push(Op::Transpose(a), out)
    }

    pub fn row_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.require_rank2("row_softmax", a)?;
        if self.value(a).ncols() == 0 {
            return Err(Self::shape_err(
                "row_softmax",
                "rows must have at least one column".to_string(),
            ));
        }
        let out = row_softmax(self.value(a));
        self.push(Op::RowSoftmax(a), out)
    }

    /// Elementwise max(x, 0). The subgradient at exactly zero is zero.
    pub fn max_zero(&mut self, a: NodeId) -> Result<NodeId> {
        let mut out = self.value(a).clone();
        for o in out.data_mut() {
            if *o < 0.0 {
                *o = 0.0;
            }
        }
        self.push(Op::MaxZero(a), out)
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.max_zero(a)
    }

    /// Rows of `table` selected by index: output row i is `table[ids[i]]`.
    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        self.require_rank2("gather", table)?;
        let t = self.value(table);
        let (v, d) = (t.nrows(), t.ncols());
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Self::shape_err(
                "gather",
                format!("index {} out of range for table with {} rows", bad, v),
            ));
        }
        let mut out = Array::zeros(vec![ids.len(), d]);
        for (i, &id) in ids.iter().enumerate() {
            out.row_mut(i).copy_from_slice(t.row(id));
        }
        self.push(
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            out,
        )
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Self::shape_err("concat_cols", "no operands".to_string()));
        }
        let n = self.value(parts[0]).nrows();
        for &p in parts {
            self.require_rank2("concat_cols", p)?;
            if self.value(p).nrows() != n {
                return Err(Self::shape_err(
                    "concat_cols",
                    format!("row counts differ: {} vs {}", n, self.value(p).nrows()),
                ));
            }
        }
        let m: usize = parts.iter().map(|&p| self.value(p).ncols()).sum();
        let mut out = Array::zeros(vec![n, m]);
        for i in 0..n {
            let mut off = 0;
            for &p in parts {
                let row = self.nodes[p.0].value.row(i);
                out.row_mut(i)[off..off + row.len()].copy_from_slice(row);
                off += row.len();
            }
        }
        self.push(Op::ConcatCols(parts.to_vec()), out)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Self::shape_err("concat_rows", "no operands".to_string()));
        }
        let m = self.value(parts[0]).ncols();
        for &p in parts {
            self.require_rank2("concat_rows", p)?;
            if self.value(p).ncols() != m {
                return Err(Self::shape_err(
                    "concat_rows",
                    format!("column counts differ: {} vs {}", m, self.value(p).ncols()),
                ));
            }
        }
        let n: usize = parts.iter().map(|&p| self.value(p).nrows()).sum();
        let mut out = Array::zeros(vec![n, m]);
        let mut r = 0;
        for &p in parts {
            for i in 0..self.nodes[p.0].value.nrows() {
                let src = self.nodes[p.0].value.row(i).to_vec();
                out.row_mut(r).copy_from_slice(&src);
                r += 1;
            }
        }
        self.push(Op::ConcatRows(parts.to_vec()), out)
    }

    pub fn slice_cols(&mut self, input: NodeId, start: usize, end: usize) -> Result<NodeId> {
        self.require_rank2("slice_cols", input)?;
        let v = self.value(input);
        if start > end || end > v.ncols() {
            return Err(Self::shape_err(
                "slice_cols",
                format!("range {}..{} invalid for {} columns", start, end, v.ncols()),
            ));
        }
        let n = v.nrows();
        let mut out = Array::zeros(vec![n, end - start]);
        for i in 0..n {
            out.row_mut(i).copy_from_slice(&v.row(i)[start..end]);
        }
        self.push(Op::SliceCols { input, start }, out)
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Array::scalar(s))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(Error::InvalidArgument("mean of an empty array".to_string()));
        }
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Op::Mean(a), Array::scalar(s / n as f64))
    }

    /// Row-wise layer normalization with learned gain and bias:
    /// `y = gamma * (x - mean) / sqrt(var + eps) + beta`, statistics taken
    /// over each row with biased variance.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        self.require_rank2("layer_norm", x)?;
        let m = self.value(x).ncols();
        if self.value(gamma).len() != m || self.value(beta).len() != m {
            return Err(Self::shape_err(
                "layer_norm",
                format!(
                    "gain/bias must have width {}, got {:?} and {:?}",
                    m,
                    self.value(gamma).shape(),
                    self.value(beta).shape()
                ),
            ));
        }
        if eps <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "layer_norm eps must be positive, got {}",
                eps
            )));
        }
        let xv = self.value(x).clone();
        let gv = self.nodes[gamma.0].value.data().to_vec();
        let bv = self.nodes[beta.0].value.data().to_vec();
        let n = xv.nrows();
        let mut out = Array::zeros(vec![n, m]);
        for i in 0..n {
            let row = xv.row(i);
            let mu: f64 = row.iter().sum::<f64>() / m as f64;
            let var: f64 = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / m as f64;
            let sigma = (var + eps).sqrt();
            let orow = out.row_mut(i);
            for j in 0..m {
                orow[j] = gv[j] * (row[j] - mu) / sigma + bv[j];
            }
        }
        self.push(Op::LayerNorm { x, gamma, beta, eps }, out)
    }

    /// Summed cross entropy of `targets` under row softmax of `logits`.
    /// Rows with a false `mask` entry are skipped entirely. The caller is
    /// responsible for dividing by the number of scored tokens.
    pub fn cross_entropy_logits(
        &mut self,
        logits: NodeId,
        targets: &[usize],
        mask: &[bool],
    ) -> Result<NodeId> {
        self.require_rank2("cross_entropy_logits", logits)?;
        let v = self.value(logits);
        let (n, vocab) = (v.nrows(), v.ncols());
        if targets.len() != n || mask.len() != n {
            return Err(Self::shape_err(
                "cross_entropy_logits",
                format!(
                    "{} logit rows, {} targets, {} mask entries",
                    n,
                    targets.len(),
                    mask.len()
                ),
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= vocab) {
            return Err(Self::shape_err(
                "cross_entropy_logits",
                format!("target id {} out of range for vocab {}", bad, vocab),
            ));
        }
        let mut total = 0.0;
        for i in 0..n {
            if !mask[i] {
                continue;
            }
            let row = v.row(i);
            total += log_sum_exp(row) - row[targets[i]];
        }
        self.push(
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
            },
            Array::scalar(total),
        )
    }

    /// Reverse pass from a scalar loss node. Returns one gradient per node;
    /// nodes the loss does not depend on keep zero gradients.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lid = loss.0;
        if !self.nodes[lid].value.is_scalar() {
            return Err(Self::shape_err(
                "backward",
                format!(
                    "loss must be scalar, got shape {:?}",
                    self.nodes[lid].value.shape()
                ),
            ));
        }
        let mut grads: Vec<Array> = self
            .nodes
            .iter()
            .map(|n| Array::zeros(n.value.shape().to_vec()))
            .collect();
        grads[lid].data_mut()[0] = 1.0;
        let mut needed = vec![false; self.nodes.len()];
        needed[lid] = true;

        for id in (0..=lid).rev() {
            if !needed[id] {
                continue;
            }
            // Parents always precede their outputs on the tape, so splitting
            // at `id` gives disjoint views of the output gradient and every
            // parent slot.
            let (head, tail) = grads.split_at_mut(id);
            let g = &tail[0];
            match &self.nodes[id].op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    needed[a.0] = true;
                    needed[b.0] = true;
                    for (o, &v) in head[a.0].data_mut().iter_mut().zip(g.data()) {
                        *o += v;
                    }
                    for (o, &v) in head[b.0].data_mut().iter_mut().zip(g.data()) {
                        *o += v;
                    }
                }
                Op::AddRow(a, b) => {
                    needed[a.0] = true;
                    needed[b.0] = true;
                    for (o, &v) in head[a.0].data_mut().iter_mut().zip(g.data()) {
                        *o += v;
                    }
                    let m = self.nodes[b.0].value.len();
                    let gb = head[b.0].data_mut();
                    for (idx, &v) in g.data().iter().enumerate() {
                        gb[idx % m] += v;
                    }
                }
                Op::Sub(a, b) => {
                    needed[a.0] = true;
                    needed[b.0] = true;
                    for (o, &v) in head[a.0].data_mut().iter_mut().zip(g.data()) {
                        *o += v;
                    }
                    for (o, &v) in head[b.0].data_mut().iter_mut().zip(g.data()) {
                        *o -= v;
                    }
                }
                Op::Mul(a, b) => {
                    needed[a.0] = true;
                    needed[b.0] = true;
                    let vb = self.nodes[b.0].value.data();
                    for ((o, &gv), &bv) in
                        head[a.0].data_mut().iter_mut().zip(g.data()).zip(vb)
                    {
                        *o += gv * bv;
                    }
                    let va = self.nodes[a.0].value.data();
                    for ((o, &gv), &av) in
                        head[b.0].data_mut().iter_mut().zip(g.data()).zip(va)
                    {
                        *o += gv * av;
                    }
                }
                Op::Div(a, b) => {
                    needed[a.0] = true;
                    needed[b.0] = true;
                    let vb = self.nodes[b.0].value.data();
                    let out = self.nodes[id].value.data();
                    for ((o, &gv), &bv) in
                        head[a.0].data_mut().iter_mut().zip(g.data()).zip(vb)
                    {
                        *o += gv / bv;
                    }
                    for (((o, &gv), &bv), &ov) in head[b.0]
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(vb)
                        .zip(out)
                    {
                        *o -= gv * ov / bv;
                    }
                }
                Op::Scale(a, c) => {
                    needed[a.0] = true;
                    for (o, &v) in head[a.0].data_mut().iter_mut().zip(g.data()) {
                        *o += c * v;
                    }
                }
                Op::AddConst(a) => {
                    needed[a.0] = true;
                    for (o, &v) in head[a.0].data_mut().iter_mut().zip(g.data()) {
                        *o += v;
                    }
                }
                Op::MatMul(a, b) => {
                    needed[a.0] = true;
                    needed[b.0] = true;
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    if a.0 == b.0 {
                        let mut ga = Array::zeros(va.shape().to_vec());
                        matmul_nt_acc(g, vb, &mut ga);
                        matmul_tn_acc(va, g, &mut ga);
                        for (o, &v) in head[a.0].data_mut().iter_mut().zip(ga.data()) {
                            *o += v;
                        }
                    } else {
                        matmul_nt_acc(g, vb, &mut head[a.0]);
                        matmul_tn_acc(va, g, &mut head[b.0]);
                    }
                }
                Op::Transpose(a) => {
                    needed[a.0] = true;
                    let gt = transpose(g);
                    for (o, &v) in head[a.0].data_mut().iter_mut().zip(gt.data()) {
                        *o += v;
                    }
                }
                Op::RowSoftmax(a) => {
                    needed[a.0] = true;
                    let y = &self.nodes[id].value;
                    let (n, m) = (y.nrows(), y.ncols());
                    for i in 0..n {
                        let yrow = y.row(i);
                        let grow = g.row(i);
                        let dot: f64 = yrow.iter().zip(grow).map(|(&yv, &gv)| yv * gv).sum();
                        let orow = head[a.0].row_mut(i);
                        for j in 0..m {
                            orow[j] += yrow[j] * (grow[j] - dot);
                        }
                    }
                }
                Op::MaxZero(a) => {
                    needed[a.0] = true;
                    let va = self.nodes[a.0].value.data();
                    for ((o, &gv), &xv) in
                        head[a.0].data_mut().iter_mut().zip(g.data()).zip(va)
                    {
                        if xv > 0.0 {
                            *o += gv;
                        }
                    }
                }
                Op::Gather { table, ids } => {
                    needed[table.0] = true;
                    let d = g.ncols();
                    for (i, &tid) in ids.iter().enumerate() {
                        let grow = g.row(i).to_vec();
                        let orow = head[table.0].row_mut(tid);
                        for j in 0..d {
                            orow[j] += grow[j];
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let n = g.nrows();
                    for &p in parts {
                        needed[p.0] = true;
                    }
                    for i in 0..n {
                        let mut off = 0;
                        for &p in parts {
                            let w = self.nodes[p.0].value.ncols();
                            let grow = g.row(i)[off..off + w].to_vec();
                            let orow = head[p.0].row_mut(i);
                            for j in 0..w {
                                orow[j] += grow[j];
                            }
                            off += w;
                        }
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut r = 0;
                    for &p in parts {
                        needed[p.0] = true;
                        let rows = self.nodes[p.0].value.nrows();
                        let w = g.ncols();
                        for i in 0..rows {
                            let grow = g.row(r + i).to_vec();
                            let orow = head[p.0].row_mut(i);
                            for j in 0..w {
                                orow[j] += grow[j];
                            }
                        }
                        r += rows;
                    }
                }
                Op::SliceCols { input, start } => {
                    needed[input.0] = true;
                    let (n, w) = (g.nrows(), g.ncols());
                    for i in 0..n {
                        let grow = g.row(i).to_vec();
                        let orow = head[input.0].row_mut(i);
                        for j in 0..w {
                            orow[start + j] += grow[j];
                        }
                    }
                }
                Op::Sum(a) => {
                    needed[a.0] = true;
                    let gs = g.data()[0];
                    for o in head[a.0].data_mut() {
                        *o += gs;
                    }
                }
                Op::Mean(a) => {
                    needed[a.0] = true;
                    let gs = g.data()[0] / self.nodes[a.0].value.len() as f64;
                    for o in head[a.0].data_mut() {
                        *o += gs;
                    }
                }
                Op::LayerNorm { x, gamma, beta, eps } => {
                    needed[x.0] = true;
                    needed[gamma.0] = true;
                    needed[beta.0] = true;
                    let xv = &self.nodes[x.0].value;
                    let gv = self.nodes[gamma.0].value.data();
                    let (n, m) = (xv.nrows(), xv.ncols());
                    for i in 0..n {
                        let row = xv.row(i);
                        let mu: f64 = row.iter().sum::<f64>() / m as f64;
                        let var: f64 =
                            row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / m as f64;
                        let sigma = (var + eps).sqrt();
                        let grow = g.row(i);
                        let xhat: Vec<f64> = row.iter().map(|&v| (v - mu) / sigma).collect();
                        let dxhat: Vec<f64> =
                            grow.iter().zip(gv).map(|(&gg, &ga)| gg * ga).collect();
                        let mean_dxhat: f64 = dxhat.iter().sum::<f64>() / m as f64;
                        let mean_dxhat_xhat: f64 = dxhat
                            .iter()
                            .zip(&xhat)
                            .map(|(&d, &h)| d * h)
                            .sum::<f64>()
                            / m as f64;
                        {
                            let orow = head[x.0].row_mut(i);
                            for j in 0..m {
                                orow[j] += (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat)
                                    / sigma;
                            }
                        }
                        {
                            let og = head[gamma.0].data_mut();
                            for j in 0..m {
                                og[j] += grow[j] * xhat[j];
                            }
                        }
                        {
                            let ob = head[beta.0].data_mut();
                            for j in 0..m {
                                ob[j] += grow[j];
                            }
                        }
                    }
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    mask,
                } => {
                    needed[logits.0] = true;
                    let gs = g.data()[0];
                    let lv = &self.nodes[logits.0].value;
                    let (n, vocab) = (lv.nrows(), lv.ncols());
                    for i in 0..n {
                        if !mask[i] {
                            continue;
                        }
                        let row = lv.row(i);
                        let lse = log_sum_exp(row);
                        let probs: Vec<f64> = row.iter().map(|&v| (v - lse).exp()).collect();
                        let orow = head[logits.0].row_mut(i);
                        for j in 0..vocab {
                            let delta = if j == targets[i] { 1.0 } else { 0.0 };
                            orow[j] += gs * (probs[j] - delta);
                        }
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}
