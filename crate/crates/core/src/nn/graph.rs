//! Eagerly evaluated reverse-mode autodiff tape.
//!
//! Every op computes its value as soon as it is recorded, so node ids are
//! already in topological order and `backward` is a single reverse sweep.

use crate::error::{Error, Result};
use crate::nn::params::ParamSet;
use crate::nn::tensor::Tensor;

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Input,
    Variable,
    Param(usize),
    MatMul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Relu(NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    RowSumSquares(NodeId),
    L2Normalize {
        x: NodeId,
        axis: usize,
    },
    RowNorm(NodeId),
    FrobeniusNorm(NodeId),
    GatherRows {
        x: NodeId,
        rows: Vec<usize>,
    },
    SoftmaxCrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
    },
    WeightedSqDist {
        x: NodeId,
        anchor: Vec<f64>,
        weights: Vec<f64>,
    },
    Reshape(NodeId),
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        padding: usize,
    },
    MaxPool2d {
        x: NodeId,
        argmax: Vec<usize>,
    },
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// A recorded computation. Build it by calling op methods, then call
/// [`Graph::backward`] on a scalar node.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Graph::backward`] for nodes that require gradients.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `node`, if the node required one.
    /// Nodes the loss does not depend on report all zeros.
    pub fn get(&self, node: NodeId) -> Option<&[f64]> {
        self.grads.get(node.0).and_then(|g| g.as_deref())
    }
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// Constant input; no gradient is tracked for it.
    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Input, t, false)
    }

    /// Free leaf whose gradient is reported through [`Gradients::get`].
    pub fn variable(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Variable, t, true)
    }

    /// Leaf bound to parameter `index` of `params`; backward accumulates into
    /// that parameter's gradient buffer.
    pub fn param(&mut self, params: &ParamSet, index: usize) -> NodeId {
        let mut value = params.get(index).clone();
        value.clear_grad();
        self.push(Op::Param(index), value, true)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (n, k) = self.value(a).dims2()?;
        let (k2, m) = self.value(b).dims2()?;
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul of [{n}, {k}] by [{k2}, {m}]: inner dimensions differ"
            )));
        }
        let mut out = vec![0.0; n * m];
        gemm(
            n,
            k,
            m,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
            0.0,
        );
        let rg = self.needs(&[a, b]);
        Ok(self.push(Op::MatMul(a, b), Tensor::new(vec![n, m], out)?, rg))
    }

    /// Adds a length-`m` bias to every row of an `[n, m]` matrix.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (n, m) = self.value(x).dims2()?;
        let b = self.value(bias);
        if b.numel() != m {
            return Err(Error::Shape(format!(
                "bias of length {} for rows of width {m}",
                b.numel()
            )));
        }
        let b = b.data();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(m.max(1)) {
            row.iter_mut().zip(b).for_each(|(o, bv)| *o += bv);
        }
        let rg = self.needs(&[x, bias]);
        Ok(self.push(Op::AddBias(x, bias), Tensor::new(vec![n, m], out)?, rg))
    }

    /// `x · w + b` with `w` laid out `[in, out]`.
    pub fn dense(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Shape(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: NodeId, b: NodeId, op: Op, f: impl Fn(f64, f64) -> f64) -> NodeId {
        let va = self.value(a);
        let data = va
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let value = Tensor::new(va.shape().to_vec(), data).expect("same shape");
        let rg = self.needs(&[a, b]);
        self.push(op, value, rg)
    }

    fn map(&mut self, a: NodeId, op: Op, f: impl Fn(f64) -> f64) -> NodeId {
        let va = self.value(a);
        let data = va.data().iter().map(|x| f(*x)).collect();
        let value = Tensor::new(va.shape().to_vec(), data).expect("same shape");
        let rg = self.needs(&[a]);
        self.push(op, value, rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "add")?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "sub")?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "mul")?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        self.map(a, Op::Scale(a, c), |x| c * x)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        self.map(a, Op::AddScalar(a), |x| x + c)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.map(a, Op::Relu(a), |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data().iter().sum();
        let rg = self.needs(&[a]);
        self.push(Op::SumAll(a), Tensor::scalar(s), rg)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let s = v.data().iter().sum::<f64>() / v.numel().max(1) as f64;
        let rg = self.needs(&[a]);
        self.push(Op::MeanAll(a), Tensor::scalar(s), rg)
    }

    /// Per-row sum of squares of an `[n, d]` matrix, shape `[n]`.
    pub fn row_sum_squares(&mut self, a: NodeId) -> Result<NodeId> {
        let (n, _) = self.value(a).dims2()?;
        let out = self
            .value(a)
            .rows()
            .take(n)
            .map(|r| r.iter().map(|v| v * v).sum())
            .collect();
        let rg = self.needs(&[a]);
        Ok(self.push(Op::RowSumSquares(a), Tensor::vector(out), rg))
    }

    /// Divides every slice along `axis` by its Euclidean norm.
    pub fn l2_normalize(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let v = self.value(x);
        let (outer, len, inner) = axis_layout(v.shape(), axis)?;
        let src = v.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| (o * len + a) * inner + i;
                let norm = (0..len).map(|a| src[at(a)].powi(2)).sum::<f64>().sqrt();
                if norm < 1e-12 {
                    return Err(Error::Normalization {
                        index: o * inner + i,
                        norm,
                    });
                }
                for a in 0..len {
                    out[at(a)] = src[at(a)] / norm;
                }
            }
        }
        let value = Tensor::new(v.shape().to_vec(), out)?;
        let rg = self.needs(&[x]);
        Ok(self.push(Op::L2Normalize { x, axis }, value, rg))
    }

    /// Euclidean norm of every row of an `[n, d]` matrix, shape `[n]`.
    pub fn row_norm(&mut self, a: NodeId) -> Result<NodeId> {
        let (n, _) = self.value(a).dims2()?;
        let out = self
            .value(a)
            .rows()
            .take(n)
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let rg = self.needs(&[a]);
        Ok(self.push(Op::RowNorm(a), Tensor::vector(out), rg))
    }

    pub fn frobenius_norm(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data().iter().map(|v| v * v).sum::<f64>().sqrt();
        let rg = self.needs(&[a]);
        self.push(Op::FrobeniusNorm(a), Tensor::scalar(s), rg)
    }

    pub fn gather_rows(&mut self, x: NodeId, rows: &[usize]) -> Result<NodeId> {
        let value = self.value(x).select_rows(rows)?;
        let rg = self.needs(&[x]);
        Ok(self.push(
            Op::GatherRows {
                x,
                rows: rows.to_vec(),
            },
            value,
            rg,
        ))
    }

    /// Mean over rows of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let (n, k) = self.value(logits).dims2()?;
        if labels.len() != n {
            return Err(Error::Shape(format!(
                "{} labels for {n} rows of logits",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {k} logits"
            )));
        }
        let mut total = 0.0;
        for (row, &label) in self.value(logits).rows().zip(labels) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[label];
        }
        let rg = self.needs(&[logits]);
        Ok(self.push(
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
            Tensor::scalar(total / n.max(1) as f64),
            rg,
        ))
    }

    /// `½ Σ w_p (x_p − anchor_p)²`; the anchor and weights are constants.
    pub fn weighted_sq_dist(&mut self, x: NodeId, anchor: &[f64], weights: &[f64]) -> Result<NodeId> {
        let v = self.value(x);
        if anchor.len() != v.numel() || weights.len() != v.numel() {
            return Err(Error::Shape(format!(
                "penalty over {} values with anchor {} and weights {}",
                v.numel(),
                anchor.len(),
                weights.len()
            )));
        }
        let s = v
            .data()
            .iter()
            .zip(anchor)
            .zip(weights)
            .map(|((x, a), w)| 0.5 * w * (x - a) * (x - a))
            .sum();
        let rg = self.needs(&[x]);
        Ok(self.push(
            Op::WeightedSqDist {
                x,
                anchor: anchor.to_vec(),
                weights: weights.to_vec(),
            },
            Tensor::scalar(s),
            rg,
        ))
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.needs(&[x]);
        Ok(self.push(Op::Reshape(x), value, rg))
    }

    /// Stride-1 convolution. `x` is `[n, c, h, w]`, `w` is `[o, c, kh, kw]`,
    /// `b` has length `o`; `padding` zeros are added on every border.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId, padding: usize) -> Result<NodeId> {
        let geo = ConvGeometry::new(self.value(x).shape(), self.value(w).shape(), padding)?;
        if self.value(b).numel() != geo.o {
            return Err(Error::Shape(format!(
                "conv bias has {} entries for {} output channels",
                self.value(b).numel(),
                geo.o
            )));
        }
        let (xd, wd, bd) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        let mut out = vec![0.0; geo.n * geo.o * geo.spatial()];
        let mut cols = vec![0.0; geo.patch() * geo.spatial()];
        for s in 0..geo.n {
            geo.im2col(&xd[s * geo.in_len()..(s + 1) * geo.in_len()], &mut cols);
            let dst = &mut out[s * geo.o * geo.spatial()..(s + 1) * geo.o * geo.spatial()];
            gemm(geo.o, geo.patch(), geo.spatial(), wd, false, &cols, false, dst, 0.0);
            for (oc, chunk) in dst.chunks_mut(geo.spatial()).enumerate() {
                chunk.iter_mut().for_each(|v| *v += bd[oc]);
            }
        }
        let value = Tensor::new(vec![geo.n, geo.o, geo.oh, geo.ow], out)?;
        let rg = self.needs(&[x, w, b]);
        Ok(self.push(Op::Conv2d { x, w, b, padding }, value, rg))
    }

    /// Non-overlapping max pooling over `size × size` windows of `[n, c, h, w]`.
    pub fn max_pool2d(&mut self, x: NodeId, size: usize) -> Result<NodeId> {
        let v = self.value(x);
        let [n, c, h, w] = match *v.shape() {
            [n, c, h, w] => [n, c, h, w],
            ref other => {
                return Err(Error::Shape(format!("max_pool2d expects [n, c, h, w], got {other:?}")))
            }
        };
        if size == 0 || h < size || w < size {
            return Err(Error::Shape(format!("pool size {size} does not fit {h}x{w}")));
        }
        let (oh, ow) = (h / size, w / size);
        let src = v.data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for py in 0..oh {
                for px in 0..ow {
                    let mut best = base + py * size * w + px * size;
                    for dy in 0..size {
                        for dx in 0..size {
                            let at = base + (py * size + dy) * w + px * size + dx;
                            if src[at] > src[best] {
                                best = at;
                            }
                        }
                    }
                    out.push(src[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::new(vec![n, c, oh, ow], out)?;
        let rg = self.needs(&[x]);
        Ok(self.push(Op::MaxPool2d { x, argmax }, value, rg))
    }

    /// Reverse sweep from the scalar `loss`. Parameter gradients are added to
    /// the gradient buffers in `params` (they accumulate until zeroed); every
    /// parameter ends up with a buffer, so unreached ones read exactly zero.
    pub fn backward(&self, loss: NodeId, params: &mut ParamSet) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::State("backward called before any forward pass".into()));
        }
        let Some(root) = self.nodes.get(loss.0) else {
            return Err(Error::State(format!(
                "node {} was not produced by this graph's forward pass",
                loss.0
            )));
        };
        if root.value.numel() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        for node in &self.nodes {
            if let Op::Param(i) = node.op {
                if i >= params.len() || params.get(i).shape() != node.value.shape() {
                    return Err(Error::Shape(format!(
                        "graph parameter {i} does not match the supplied parameter set"
                    )));
                }
            }
        }
        for t in params.tensors_mut() {
            t.grad_mut();
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads, params);
            if matches!(node.op, Op::Variable | Op::Param(_)) {
                grads[idx] = Some(g);
            }
        }
        for (idx, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Variable | Op::Param(_)) && grads[idx].is_none() {
                grads[idx] = Some(vec![0.0; node.value.numel()]);
            }
        }
        Ok(Gradients { grads })
    }

    fn slot<'a>(&self, grads: &'a mut [Option<Vec<f64>>], id: NodeId) -> Option<&'a mut Vec<f64>> {
        let node = &self.nodes[id.0];
        if !node.requires_grad {
            return None;
        }
        let n = node.value.numel();
        Some(grads[id.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>], params: &mut ParamSet) {
        let val = |id: NodeId| &self.nodes[id.0].value;
        match &node.op {
            Op::Input | Op::Variable => {}
            Op::Param(i) => {
                params
                    .get_mut(*i)
                    .grad_mut()
                    .iter_mut()
                    .zip(g)
                    .for_each(|(p, gv)| *p += gv);
            }
            Op::MatMul(a, b) => {
                let (n, k) = val(*a).dims2().expect("matrix");
                let m = val(*b).shape()[1];
                if let Some(da) = self.slot(grads, *a) {
                    gemm(n, m, k, g, false, val(*b).data(), true, da, 1.0);
                }
                if let Some(db) = self.slot(grads, *b) {
                    gemm(k, n, m, val(*a).data(), true, g, false, db, 1.0);
                }
            }
            Op::AddBias(x, b) => {
                if let Some(dx) = self.slot(grads, *x) {
                    add_into(dx, g);
                }
                if let Some(db) = self.slot(grads, *b) {
                    let m = db.len();
                    for row in g.chunks(m.max(1)) {
                        add_into(db, row);
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(da) = self.slot(grads, *a) {
                    add_into(da, g);
                }
                if let Some(db) = self.slot(grads, *b) {
                    add_into(db, g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(da) = self.slot(grads, *a) {
                    add_into(da, g);
                }
                if let Some(db) = self.slot(grads, *b) {
                    db.iter_mut().zip(g).for_each(|(d, gv)| *d -= gv);
                }
            }
            Op::Mul(a, b) => {
                if let Some(da) = self.slot(grads, *a) {
                    for ((d, gv), bv) in da.iter_mut().zip(g).zip(val(*b).data()) {
                        *d += gv * bv;
                    }
                }
                if let Some(db) = self.slot(grads, *b) {
                    for ((d, gv), av) in db.iter_mut().zip(g).zip(val(*a).data()) {
                        *d += gv * av;
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(da) = self.slot(grads, *a) {
                    da.iter_mut().zip(g).for_each(|(d, gv)| *d += c * gv);
                }
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                if let Some(da) = self.slot(grads, *a) {
                    add_into(da, g);
                }
            }
            Op::Relu(a) => {
                if let Some(da) = self.slot(grads, *a) {
                    for ((d, gv), x) in da.iter_mut().zip(g).zip(val(*a).data()) {
                        if *x > 0.0 {
                            *d += gv;
                        }
                    }
                }
            }
            Op::SumAll(a) => {
                if let Some(da) = self.slot(grads, *a) {
                    da.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::MeanAll(a) => {
                if let Some(da) = self.slot(grads, *a) {
                    let s = g[0] / da.len().max(1) as f64;
                    da.iter_mut().for_each(|d| *d += s);
                }
            }
            Op::RowSumSquares(a) => {
                let x = val(*a);
                if let Some(da) = self.slot(grads, *a) {
                    let d = x.shape()[1].max(1);
                    for (i, (drow, xrow)) in da.chunks_mut(d).zip(x.data().chunks(d)).enumerate() {
                        for (dv, xv) in drow.iter_mut().zip(xrow) {
                            *dv += 2.0 * g[i] * xv;
                        }
                    }
                }
            }
            Op::L2Normalize { x, axis } => {
                let (outer, len, inner) = axis_layout(val(*x).shape(), *axis).expect("validated");
                let src = val(*x).data();
                let y = node.value.data();
                if let Some(dx) = self.slot(grads, *x) {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |a: usize| (o * len + a) * inner + i;
                            let norm = (0..len).map(|a| src[at(a)].powi(2)).sum::<f64>().sqrt();
                            let dot: f64 = (0..len).map(|a| y[at(a)] * g[at(a)]).sum();
                            for a in 0..len {
                                dx[at(a)] += (g[at(a)] - y[at(a)] * dot) / norm;
                            }
                        }
                    }
                }
            }
            Op::RowNorm(a) => {
                let x = val(*a);
                let norms = node.value.data();
                if let Some(da) = self.slot(grads, *a) {
                    let d = x.shape()[1].max(1);
                    for (i, (drow, xrow)) in da.chunks_mut(d).zip(x.data().chunks(d)).enumerate() {
                        if norms[i] > 0.0 {
                            let s = g[i] / norms[i];
                            drow.iter_mut().zip(xrow).for_each(|(dv, xv)| *dv += s * xv);
                        }
                    }
                }
            }
            Op::FrobeniusNorm(a) => {
                let norm = node.value.data()[0];
                let x = val(*a);
                if let Some(da) = self.slot(grads, *a) {
                    if norm > 0.0 {
                        let s = g[0] / norm;
                        da.iter_mut().zip(x.data()).for_each(|(dv, xv)| *dv += s * xv);
                    }
                }
            }
            Op::GatherRows { x, rows } => {
                let d = node.value.shape()[1];
                if let Some(dx) = self.slot(grads, *x) {
                    for (k, &r) in rows.iter().enumerate() {
                        add_into(&mut dx[r * d..(r + 1) * d], &g[k * d..(k + 1) * d]);
                    }
                }
            }
            Op::SoftmaxCrossEntropy { logits, labels } => {
                let z = val(*logits);
                let (n, k) = z.dims2().expect("matrix");
                if let Some(dz) = self.slot(grads, *logits) {
                    let s = g[0] / n.max(1) as f64;
                    for (i, row) in z.rows().enumerate().take(n) {
                        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
                        for j in 0..k {
                            let p = (row[j] - max).exp() / denom;
                            let target = if j == labels[i] { 1.0 } else { 0.0 };
                            dz[i * k + j] += s * (p - target);
                        }
                    }
                }
            }
            Op::WeightedSqDist { x, anchor, weights } => {
                let xv = val(*x);
                if let Some(dx) = self.slot(grads, *x) {
                    for (((d, v), a), w) in dx.iter_mut().zip(xv.data()).zip(anchor).zip(weights) {
                        *d += g[0] * w * (v - a);
                    }
                }
            }
            Op::Conv2d { x, w, b, padding } => {
                let geo = ConvGeometry::new(val(*x).shape(), val(*w).shape(), *padding).expect("validated");
                let xd = val(*x).data();
                let wd = val(*w).data();
                let mut cols = vec![0.0; geo.patch() * geo.spatial()];
                let mut dcols = vec![0.0; geo.patch() * geo.spatial()];
                let out_len = geo.o * geo.spatial();
                if let Some(db) = self.slot(grads, *b) {
                    for s in 0..geo.n {
                        for (oc, chunk) in g[s * out_len..(s + 1) * out_len].chunks(geo.spatial()).enumerate() {
                            db[oc] += chunk.iter().sum::<f64>();
                        }
                    }
                }
                if self.nodes[w.0].requires_grad {
                    let mut dw = vec![0.0; wd.len()];
                    for s in 0..geo.n {
                        geo.im2col(&xd[s * geo.in_len()..(s + 1) * geo.in_len()], &mut cols);
                        let gs = &g[s * out_len..(s + 1) * out_len];
                        gemm(geo.o, geo.spatial(), geo.patch(), gs, false, &cols, true, &mut dw, 1.0);
                    }
                    if let Some(slot) = self.slot(grads, *w) {
                        add_into(slot, &dw);
                    }
                }
                if let Some(dx) = self.slot(grads, *x) {
                    for s in 0..geo.n {
                        let gs = &g[s * out_len..(s + 1) * out_len];
                        gemm(geo.patch(), geo.o, geo.spatial(), wd, true, gs, false, &mut dcols, 0.0);
                        geo.col2im_add(&dcols, &mut dx[s * geo.in_len()..(s + 1) * geo.in_len()]);
                    }
                }
            }
            Op::MaxPool2d { x, argmax } => {
                if let Some(dx) = self.slot(grads, *x) {
                    for (gv, &at) in g.iter().zip(argmax) {
                        dx[at] += gv;
                    }
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

/// Splits `shape` around `axis` into (outer, axis length, inner) extents.
fn axis_layout(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::Shape(format!(
            "axis {axis} out of range for shape {shape:?}"
        )));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

/// `c = beta·c + a·b` for an `m×k` by `k×n` product; `a_t`/`b_t` mean the
/// operand is stored transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the assert above guarantees every strided access stays inside
    // the three slices, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

struct ConvGeometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    pad: usize,
}

impl ConvGeometry {
    fn new(x: &[usize], w: &[usize], pad: usize) -> Result<Self> {
        let (&[n, c, h, wd], &[o, c2, kh, kw]) = (x, w) else {
            return Err(Error::Shape(format!(
                "conv2d expects x [n, c, h, w] and w [o, c, kh, kw], got {x:?} and {w:?}"
            )));
        };
        if c != c2 {
            return Err(Error::Shape(format!(
                "conv2d input has {c} channels, kernel expects {c2}"
            )));
        }
        if h + 2 * pad < kh || wd + 2 * pad < kw {
            return Err(Error::Shape(format!(
                "kernel {kh}x{kw} larger than padded input {h}x{wd}"
            )));
        }
        Ok(Self {
            n,
            c,
            h,
            w: wd,
            o,
            kh,
            kw,
            oh: h + 2 * pad - kh + 1,
            ow: wd + 2 * pad - kw + 1,
            pad,
        })
    }

    fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn spatial(&self) -> usize {
        self.oh * self.ow
    }

    fn in_len(&self) -> usize {
        self.c * self.h * self.w
    }

    /// Source index in one sample for patch row `r` at output position `p`.
    fn source(&self, r: usize, p: usize) -> Option<usize> {
        let (ch, rest) = (r / (self.kh * self.kw), r % (self.kh * self.kw));
        let (ky, kx) = (rest / self.kw, rest % self.kw);
        let (py, px) = (p / self.ow, p % self.ow);
        let y = (py + ky).checked_sub(self.pad)?;
        let x = (px + kx).checked_sub(self.pad)?;
        (y < self.h && x < self.w).then(|| (ch * self.h + y) * self.w + x)
    }

    fn im2col(&self, sample: &[f64], cols: &mut [f64]) {
        let sp = self.spatial();
        for r in 0..self.patch() {
            for p in 0..sp {
                cols[r * sp + p] = self.source(r, p).map_or(0.0, |i| sample[i]);
            }
        }
    }

    fn col2im_add(&self, cols: &[f64], sample: &mut [f64]) {
        let sp = self.spatial();
        for r in 0..self.patch() {
            for p in 0..sp {
                if let Some(i) = self.source(r, p) {
                    sample[i] += cols[r * sp + p];
                }
            }
        }
    }
}
