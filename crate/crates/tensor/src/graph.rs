//! Tape of primitive applications with reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the tape is topologically
//! sorted by construction and the backward pass is a single reverse sweep.

use crate::error::{Result, TensorError};
use crate::ops::{self, check_finite, gemm_nt, gemm_tn, LayerNormCache};
use crate::params::{Gradients, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Token positions of one entity pair: rows index head tokens and cols
/// index tail tokens of a `[N, L, N]` score tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellGroup {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
}

impl CellGroup {
    /// Sorts and de-duplicates both index sets, so pooling does not depend
    /// on the order mentions were listed in.
    pub fn new(mut rows: Vec<usize>, mut cols: Vec<usize>) -> Self {
        rows.sort_unstable();
        rows.dedup();
        cols.sort_unstable();
        cols.dedup();
        CellGroup { rows, cols }
    }

    pub fn num_cells(&self) -> usize {
        self.rows.len() * self.cols.len()
    }
}

enum Op {
    Param(ParamId),
    Constant,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Reshape(NodeId),
    Add(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MulConst(NodeId, Tensor),
    Scale(NodeId, f64),
    Relu(NodeId),
    SoftmaxRows(NodeId),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        cache: LayerNormCache,
        bias: NodeId,
    },
    Conv1d {
        x: NodeId,
        kernel: NodeId,
        bias: NodeId,
    },
    GatherRows {
        table: NodeId,
        ids: Vec<usize>,
    },
    SliceCols {
        x: NodeId,
        start: usize,
    },
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    PoolLse {
        x: NodeId,
        groups: Vec<CellGroup>,
    },
    LogSumExp(NodeId),
    Sum(NodeId),
    CrossEntropy {
        logits: NodeId,
        targets: Vec<Option<usize>>,
        normalizer: f64,
        probs: Tensor,
    },
}

struct Node {
    /// `None` for parameter leaves, whose value lives in the store.
    value: Option<Tensor>,
    op: Op,
}

/// A forward computation over parameters borrowed from a [`ParamStore`].
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
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
        match (&node.value, &node.op) {
            (Some(v), _) => v,
            (None, Op::Param(p)) => self.params.get(*p),
            (None, _) => unreachable!("non-parameter node without a value"),
        }
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.value(id).shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Whether each ReLU input on the tape is positive, in tape order.
    /// Two evaluations with equal patterns lie on the same smooth piece.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(a) => Some(a),
                _ => None,
            })
            .flat_map(|a| self.value(a).data().iter().map(|&v| v > 0.0))
            .collect()
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Constant)
    }

    fn mismatch(&self, op: &'static str, a: NodeId, b: NodeId) -> TensorError {
        TensorError::ShapeMismatch {
            op,
            left: self.shape(a).to_vec(),
            right: self.shape(b).to_vec(),
        }
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let v = ops::transpose(self.value(a))?;
        Ok(self.push(v, Op::Transpose(a)))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = self.value(a).reshape(shape)?;
        Ok(self.push(v, Op::Reshape(a)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch("add", a, b));
        }
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        Ok(self.push(check_finite("add", v)?, Op::Add(a, b)))
    }

    /// Adds a `[C]` bias to every row of an `[N, C]` matrix.
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (x, b) = (self.value(a), self.value(bias));
        if x.rank() != 2 || b.shape() != [x.cols()] {
            return Err(self.mismatch("add_bias", a, bias));
        }
        let mut v = x.clone();
        let cols = x.cols();
        for row in v.data_mut().chunks_mut(cols) {
            for (o, bv) in row.iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        Ok(self.push(check_finite("add_bias", v)?, Op::AddBias(a, bias)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch("mul", a, b));
        }
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let v = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(check_finite("mul", v)?, Op::Mul(a, b)))
    }

    /// Element-wise product with a constant factor (dropout and padding masks).
    pub fn mul_const(&mut self, a: NodeId, factor: Tensor) -> Result<NodeId> {
        let x = self.value(a);
        if x.shape() != factor.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mul_const",
                left: x.shape().to_vec(),
                right: factor.shape().to_vec(),
            });
        }
        let data = x
            .data()
            .iter()
            .zip(factor.data())
            .map(|(p, q)| p * q)
            .collect();
        let v = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(check_finite("mul_const", v)?, Op::MulConst(a, factor)))
    }

    /// Multiplies each row `i` of an `[N, C]` matrix by `row_factor[i]`.
    pub fn scale_rows(&mut self, a: NodeId, row_factor: &[f64]) -> Result<NodeId> {
        let x = self.value(a);
        if x.rank() != 2 || x.rows() != row_factor.len() {
            return Err(TensorError::ShapeMismatch {
                op: "scale_rows",
                left: x.shape().to_vec(),
                right: vec![row_factor.len()],
            });
        }
        let cols = x.cols();
        let factor = Tensor::from_fn(x.shape(), |k| row_factor[k / cols]);
        self.mul_const(a, factor)
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> Result<NodeId> {
        let v = self.value(a).map(|x| x * s);
        Ok(self.push(check_finite("scale", v)?, Op::Scale(a, s)))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let v = ops::relu(self.value(a));
        Ok(self.push(v, Op::Relu(a)))
    }

    /// Row-wise softmax; columns with `keep[j] == false` receive zero weight.
    pub fn softmax_rows(&mut self, a: NodeId, keep: Option<&[bool]>) -> Result<NodeId> {
        let v = ops::masked_softmax_rows(self.value(a), keep)?;
        Ok(self.push(v, Op::SoftmaxRows(a)))
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId> {
        let (v, cache) =
            ops::layer_norm_forward(self.value(x), self.value(gain), self.value(bias))?;
        Ok(self.push(
            v,
            Op::LayerNorm {
                x,
                gain,
                cache,
                bias,
            },
        ))
    }

    pub fn conv1d(&mut self, x: NodeId, kernel: NodeId, bias: NodeId) -> Result<NodeId> {
        let v = ops::conv1d(self.value(x), self.value(kernel), self.value(bias))?;
        Ok(self.push(v, Op::Conv1d { x, kernel, bias }))
    }

    /// Selects rows `ids` of a `[V, C]` table.
    pub fn gather_rows(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let t = self.value(table);
        if t.rank() != 2 {
            return Err(TensorError::Rank {
                op: "gather_rows",
                expected: 2,
                shape: t.shape().to_vec(),
            });
        }
        let (vocab, cols) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= vocab {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather_rows",
                    index: id,
                    extent: vocab,
                });
            }
            data.extend_from_slice(t.row(id));
        }
        let v = Tensor::new(vec![ids.len(), cols], data)?;
        Ok(self.push(
            v,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let t = self.value(x);
        if t.rank() != 2 || start > end || end > t.cols() {
            return Err(TensorError::ShapeMismatch {
                op: "slice_cols",
                left: t.shape().to_vec(),
                right: vec![start, end],
            });
        }
        let n = t.rows();
        let mut data = Vec::with_capacity(n * (end - start));
        for i in 0..n {
            data.extend_from_slice(&t.row(i)[start..end]);
        }
        let v = Tensor::new(vec![n, end - start], data)?;
        Ok(self.push(v, Op::SliceCols { x, start }))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = *parts
            .first()
            .ok_or(TensorError::EmptyInput { op: "concat_cols" })?;
        let n = self.shape(first)[0];
        for &p in parts {
            if self.value(p).rank() != 2 || self.shape(p)[0] != n {
                return Err(self.mismatch("concat_cols", first, p));
            }
        }
        let total: usize = parts.iter().map(|&p| self.shape(p)[1]).sum();
        let mut data = Vec::with_capacity(n * total);
        for i in 0..n {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let v = Tensor::new(vec![n, total], data)?;
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = *parts
            .first()
            .ok_or(TensorError::EmptyInput { op: "concat_rows" })?;
        let c = self.shape(first)[1];
        for &p in parts {
            if self.value(p).rank() != 2 || self.shape(p)[1] != c {
                return Err(self.mismatch("concat_rows", first, p));
            }
        }
        let rows: usize = parts.iter().map(|&p| self.shape(p)[0]).sum();
        let mut data = Vec::with_capacity(rows * c);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let v = Tensor::new(vec![rows, c], data)?;
        Ok(self.push(v, Op::ConcatRows(parts.to_vec())))
    }

    /// LogSumExp pooling of a `[N, L, N]` score tensor: output row `e`, column
    /// `l` is `log Σ exp(x[i, l, j])` over `i ∈ groups[e].rows`,
    /// `j ∈ groups[e].cols`. Output shape `[E, L]`.
    pub fn pool_lse(&mut self, x: NodeId, groups: Vec<CellGroup>) -> Result<NodeId> {
        let t = self.value(x);
        if t.rank() != 3 || t.shape()[0] != t.shape()[2] {
            return Err(TensorError::Rank {
                op: "pool_lse",
                expected: 3,
                shape: t.shape().to_vec(),
            });
        }
        let (n, rels) = (t.shape()[0], t.shape()[1]);
        let mut out = Vec::with_capacity(groups.len() * rels);
        let mut cells = Vec::new();
        for g in &groups {
            if g.rows.is_empty() || g.cols.is_empty() {
                return Err(TensorError::EmptyInput { op: "pool_lse" });
            }
            if let Some(&bad) = g.rows.iter().chain(&g.cols).find(|&&i| i >= n) {
                return Err(TensorError::IndexOutOfRange {
                    op: "pool_lse",
                    index: bad,
                    extent: n,
                });
            }
            for l in 0..rels {
                cells.clear();
                for &i in &g.rows {
                    for &j in &g.cols {
                        cells.push(t.data()[(i * rels + l) * n + j]);
                    }
                }
                out.push(ops::logsumexp_slice(&cells)?);
            }
        }
        let v = Tensor::new(vec![groups.len(), rels], out)?;
        Ok(self.push(v, Op::PoolLse { x, groups }))
    }

    /// LogSumExp over every element, producing a scalar.
    pub fn logsumexp(&mut self, x: NodeId) -> Result<NodeId> {
        let v = ops::logsumexp(self.value(x))?;
        Ok(self.push(Tensor::scalar(v), Op::LogSumExp(x)))
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x).sum();
        Ok(self.push(check_finite("sum", Tensor::scalar(v))?, Op::Sum(x)))
    }

    /// `Σ_r -log softmax(logits[r])[targets[r]] / normalizer` over rows whose
    /// target is `Some`. Rows with `None` (padding) contribute nothing.
    pub fn cross_entropy(
        &mut self,
        logits: NodeId,
        targets: &[Option<usize>],
        normalizer: f64,
    ) -> Result<NodeId> {
        let t = self.value(logits);
        if t.rank() != 2 || t.rows() != targets.len() {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                left: t.shape().to_vec(),
                right: vec![targets.len()],
            });
        }
        let classes = t.cols();
        let probs = ops::softmax(t, 1)?;
        let mut total = 0.0;
        for (r, target) in targets.iter().enumerate() {
            if let Some(c) = *target {
                if c >= classes {
                    return Err(TensorError::IndexOutOfRange {
                        op: "cross_entropy",
                        index: c,
                        extent: classes,
                    });
                }
                let row = t.row(r);
                total += ops::logsumexp_slice(row)? - row[c];
            }
        }
        let v = check_finite("cross_entropy", Tensor::scalar(total / normalizer))?;
        Ok(self.push(
            v,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                normalizer,
                probs,
            },
        ))
    }

    /// Reverse sweep from a scalar `loss`. Parameters not reachable from the
    /// loss get exact zeros.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let loss_value = self.value(loss);
        if loss_value.len() != 1 {
            return Err(TensorError::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut param_grads = Gradients::zeros_like(self.params);
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(loss_value.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Param(p) => param_grads.get_mut(*p).add_assign(&g),
                Op::Constant => {}
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                    let mut ga = vec![0.0; n * k];
                    gemm_nt(g.data(), bv.data(), &mut ga, n, m, k);
                    let mut gb = vec![0.0; k * m];
                    gemm_tn(av.data(), g.data(), &mut gb, n, k, m);
                    accumulate(&mut grads, *a, Tensor::new(vec![n, k], ga)?);
                    accumulate(&mut grads, *b, Tensor::new(vec![k, m], gb)?);
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, ops::transpose(&g)?),
                Op::Reshape(a) => {
                    let shape = self.shape(*a).to_vec();
                    accumulate(&mut grads, *a, g.reshape(&shape)?);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::AddBias(a, bias) => {
                    let cols = g.cols();
                    let mut gb = vec![0.0; cols];
                    for row in g.data().chunks(cols) {
                        for (o, v) in gb.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *bias, Tensor::vector(gb));
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = elementwise(&g, bv, |x, y| x * y);
                    let gb = elementwise(&g, av, |x, y| x * y);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MulConst(a, factor) => {
                    accumulate(&mut grads, *a, elementwise(&g, factor, |x, y| x * y));
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, g.map(|x| x * s)),
                Op::Relu(a) => {
                    let out = node.value.as_ref().expect("relu value");
                    accumulate(
                        &mut grads,
                        *a,
                        elementwise(&g, out, |x, y| if y > 0.0 { x } else { 0.0 }),
                    );
                }
                Op::SoftmaxRows(a) => {
                    let y = node.value.as_ref().expect("softmax value");
                    let cols = y.cols();
                    let mut ga = Tensor::zeros(y.shape());
                    for i in 0..y.rows() {
                        let (yr, gr) = (y.row(i), g.row(i));
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        let out = ga.row_mut(i);
                        for j in 0..cols {
                            out[j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    cache,
                    bias,
                } => {
                    let gv = self.value(*gain);
                    let xhat = &cache.normalized;
                    let (n, d) = (xhat.rows(), xhat.cols());
                    let mut g_gain = vec![0.0; d];
                    let mut g_bias = vec![0.0; d];
                    let mut gx = Tensor::zeros(&[n, d]);
                    let mut gxhat = vec![0.0; d];
                    for i in 0..n {
                        let (gr, xr) = (g.row(i), xhat.row(i));
                        for j in 0..d {
                            g_gain[j] += gr[j] * xr[j];
                            g_bias[j] += gr[j];
                            gxhat[j] = gr[j] * gv.data()[j];
                        }
                        let sum_g: f64 = gxhat.iter().sum();
                        let sum_gx: f64 = gxhat.iter().zip(xr).map(|(p, q)| p * q).sum();
                        let scale = cache.inv_std[i] / d as f64;
                        let out = gx.row_mut(i);
                        for j in 0..d {
                            out[j] = scale * (d as f64 * gxhat[j] - sum_g - xr[j] * sum_gx);
                        }
                    }
                    accumulate(&mut grads, *gain, Tensor::vector(g_gain));
                    accumulate(&mut grads, *bias, Tensor::vector(g_bias));
                    accumulate(&mut grads, *x, gx);
                }
                Op::Conv1d { x, kernel, bias } => {
                    let (xv, kv) = (self.value(*x), self.value(*kernel));
                    let (n, cin) = (xv.rows(), xv.cols());
                    let (width, cout) = (kv.shape()[0], kv.shape()[2]);
                    let half = width / 2;
                    let mut gx = vec![0.0; n * cin];
                    let mut gk = vec![0.0; width * cin * cout];
                    let mut gb = vec![0.0; cout];
                    for row in g.data().chunks(cout) {
                        for (o, v) in gb.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    for tap in 0..width {
                        let lo = half.saturating_sub(tap);
                        let hi = (n + half).saturating_sub(tap).min(n);
                        if lo >= hi {
                            continue;
                        }
                        let src = lo + tap - half;
                        let rows = hi - lo;
                        let w = &kv.data()[tap * cin * cout..(tap + 1) * cin * cout];
                        let g_rows = &g.data()[lo * cout..hi * cout];
                        gemm_nt(
                            g_rows,
                            w,
                            &mut gx[src * cin..(src + rows) * cin],
                            rows,
                            cout,
                            cin,
                        );
                        gemm_tn(
                            &xv.data()[src * cin..(src + rows) * cin],
                            g_rows,
                            &mut gk[tap * cin * cout..(tap + 1) * cin * cout],
                            rows,
                            cin,
                            cout,
                        );
                    }
                    accumulate(&mut grads, *x, Tensor::new(vec![n, cin], gx)?);
                    accumulate(&mut grads, *kernel, Tensor::new(kv.shape().to_vec(), gk)?);
                    accumulate(&mut grads, *bias, Tensor::vector(gb));
                }
                Op::GatherRows { table, ids } => {
                    let shape = self.shape(*table).to_vec();
                    let mut gt = Tensor::zeros(&shape);
                    for (r, &id) in ids.iter().enumerate() {
                        let src = g.row(r);
                        for (o, v) in gt.row_mut(id).iter_mut().zip(src) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *table, gt);
                }
                Op::SliceCols { x, start } => {
                    let shape = self.shape(*x).to_vec();
                    let mut gx = Tensor::zeros(&shape);
                    let width = g.cols();
                    for i in 0..g.rows() {
                        gx.row_mut(i)[*start..start + width].copy_from_slice(g.row(i));
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let shape = self.shape(p).to_vec();
                        let mut gp = Tensor::zeros(&shape);
                        for i in 0..shape[0] {
                            gp.row_mut(i)
                                .copy_from_slice(&g.row(i)[offset..offset + shape[1]]);
                        }
                        offset += shape[1];
                        accumulate(&mut grads, p, gp);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let shape = self.shape(p).to_vec();
                        let len = shape[0] * shape[1];
                        let gp = Tensor::new(shape, g.data()[offset..offset + len].to_vec())?;
                        offset += len;
                        accumulate(&mut grads, p, gp);
                    }
                }
                Op::PoolLse { x, groups } => {
                    let xv = self.value(*x);
                    let pooled = node.value.as_ref().expect("pool value");
                    let (n, rels) = (xv.shape()[0], xv.shape()[1]);
                    let mut gx = Tensor::zeros(xv.shape());
                    for (e, grp) in groups.iter().enumerate() {
                        for l in 0..rels {
                            let upstream = g.data()[e * rels + l];
                            if upstream == 0.0 {
                                continue;
                            }
                            let lse = pooled.data()[e * rels + l];
                            for &i in &grp.rows {
                                for &j in &grp.cols {
                                    let k = (i * rels + l) * n + j;
                                    gx.data_mut()[k] += upstream * (xv.data()[k] - lse).exp();
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::LogSumExp(x) => {
                    let xv = self.value(*x);
                    let lse = node.value.as_ref().expect("lse value").item();
                    let upstream = g.item();
                    accumulate(&mut grads, *x, xv.map(|v| upstream * (v - lse).exp()));
                }
                Op::Sum(x) => {
                    let shape = self.shape(*x).to_vec();
                    accumulate(&mut grads, *x, Tensor::filled(&shape, g.item()));
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    normalizer,
                    probs,
                } => {
                    let upstream = g.item() / normalizer;
                    let mut gl = Tensor::zeros(probs.shape());
                    for (r, target) in targets.iter().enumerate() {
                        if let Some(c) = *target {
                            let out = gl.row_mut(r);
                            out.copy_from_slice(probs.row(r));
                            out[c] -= 1.0;
                            for v in out.iter_mut() {
                                *v *= upstream;
                            }
                        }
                    }
                    accumulate(&mut grads, *logits, gl);
                }
            }
        }
        if !param_grads.is_finite() {
            return Err(TensorError::NonFinite { op: "backward" });
        }
        Ok(param_grads)
    }
}

fn elementwise(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("elementwise shapes agree")
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}
