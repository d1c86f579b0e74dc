//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as a node in creation order, which is a
//! topological order, so the backward pass is a single reverse sweep. Nodes
//! that cannot reach a trainable parameter are skipped. Parameter values are
//! borrowed from the [`ParamStore`] rather than copied.

use std::borrow::Cow;
use std::ops::Range;
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::array::NdArray;
use super::ops::{self, gemm};
use super::params::{ParamId, ParamStore};
use crate::attention::kernel::{attend, attend_backward};
use crate::attention::plan::AttentionPlan;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    Relu(Var),
    Transpose(Var),
    Reshape(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, Range<usize>),
    SliceCols(Var, Range<usize>),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    RmsNorm {
        x: Var,
        gain: Var,
        inv_rms: Vec<f64>,
    },
    Softmax(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        ignore: usize,
        probs: NdArray,
        count: usize,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    MeanRows {
        x: Var,
        rows: Range<usize>,
    },
    BlockMean {
        x: Var,
        blocks: Vec<Range<usize>>,
    },
    Attention(Box<AttentionNode>),
    Sum(Var),
}

struct AttentionNode {
    q: Var,
    k: Var,
    v: Var,
    bias: Option<Var>,
    heads: usize,
    plan: Rc<AttentionPlan>,
    probs: Vec<f64>,
    dropout: Option<Vec<f64>>,
}

struct Node<'p> {
    value: Cow<'p, NdArray>,
    op: Op,
    needs_grad: bool,
}

/// Saved attention weights of one attention call, kept when recording is on.
#[derive(Debug, Clone)]
pub struct RecordedAttention {
    pub label: String,
    pub heads: usize,
    pub plan: Rc<AttentionPlan>,
    pub probs: Vec<f64>,
}

pub struct Graph<'p> {
    nodes: Vec<Node<'p>>,
    params: Vec<(ParamId, Var)>,
    rng: Option<ChaCha8Rng>,
    score_evals: usize,
    record_attention: bool,
    recorded: Vec<RecordedAttention>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Graph<'p> {
    /// Evaluation-mode graph: dropout is the identity.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
            rng: None,
            score_evals: 0,
            record_attention: false,
            recorded: Vec::new(),
        }
    }

    /// Training-mode graph whose dropout masks come from `seed`.
    pub fn training(seed: u64) -> Self {
        Self {
            rng: Some(ChaCha8Rng::seed_from_u64(seed)),
            ..Self::new()
        }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn record_attention(&mut self, on: bool) {
        self.record_attention = on;
    }

    pub fn take_recorded_attention(&mut self) -> Vec<RecordedAttention> {
        std::mem::take(&mut self.recorded)
    }

    /// Query-key scores evaluated per head across all attention calls.
    pub fn score_evals(&self) -> usize {
        self.score_evals
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'p, NdArray>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: NdArray, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.push(Cow::Owned(value), op, needs_grad)
    }

    pub fn value(&self, v: Var) -> &NdArray {
        &self.nodes[v.0].value
    }

    pub fn constant(&mut self, value: NdArray) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, false)
    }

    /// Differentiable leaf owned by the graph (used by gradient checks).
    pub fn variable(&mut self, value: NdArray) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, true)
    }

    /// Borrows a parameter; gradients are collected when `trainable`.
    pub fn param(&mut self, store: &'p ParamStore, id: ParamId, trainable: bool) -> Var {
        let v = self.push(Cow::Borrowed(store.get(id)), Op::Leaf, trainable);
        if trainable {
            self.params.push((id, v));
        }
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push_op(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::add(self.value(a), self.value(b))?;
        Ok(self.push_op(out, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::mul(self.value(a), self.value(b))?;
        Ok(self.push_op(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.push_op(out, Op::Scale(a, s), &[a])
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let out = ops::add_row(self.value(a), self.value(row))?;
        Ok(self.push_op(out, Op::AddRow(a, row), &[a, row]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = ops::relu(self.value(a));
        self.push_op(out, Op::Relu(a), &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push_op(out, Op::Transpose(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        Ok(self.push_op(out, Op::Reshape(a), &[a]))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&NdArray> = parts.iter().map(|&p| self.value(p)).collect();
        let out = ops::concat_rows(&values)?;
        Ok(self.push_op(out, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&NdArray> = parts.iter().map(|&p| self.value(p)).collect();
        let out = ops::concat_cols(&values)?;
        Ok(self.push_op(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn slice_rows(&mut self, a: Var, rows: Range<usize>) -> Result<Var> {
        let x = self.value(a);
        if rows.end > x.rows() || rows.start > rows.end {
            return Err(Error::Shape {
                op: "slice_rows",
                left: x.shape().to_vec(),
                right: vec![rows.start, rows.end],
            });
        }
        let c = x.cols();
        let out = NdArray::new(
            vec![rows.len(), c],
            x.data()[rows.start * c..rows.end * c].to_vec(),
        )?;
        Ok(self.push_op(out, Op::SliceRows(a, rows), &[a]))
    }

    pub fn slice_cols(&mut self, a: Var, cols: Range<usize>) -> Result<Var> {
        let x = self.value(a);
        if cols.end > x.cols() || cols.start > cols.end {
            return Err(Error::Shape {
                op: "slice_cols",
                left: x.shape().to_vec(),
                right: vec![cols.start, cols.end],
            });
        }
        let out = NdArray::from_fn(x.rows(), cols.len(), |i, j| x.get(i, cols.start + j));
        Ok(self.push_op(out, Op::SliceCols(a, cols), &[a]))
    }

    /// Row lookup: output row `i` is `table[ids[i]]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let c = t.cols();
        let mut data = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            if id >= t.rows() {
                return Err(Error::InvalidArgument(format!(
                    "gather index {id} out of range for {} rows",
                    t.rows()
                )));
            }
            data.extend_from_slice(t.row(id));
        }
        let out = NdArray::new(vec![ids.len(), c], data)?;
        Ok(self.push_op(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    pub fn rms_norm(&mut self, x: Var, gain: Var) -> Result<Var> {
        let (out, inv_rms) = ops::rms_norm_with_stats(self.value(x), self.value(gain))?;
        Ok(self.push_op(out, Op::RmsNorm { x, gain, inv_rms }, &[x, gain]))
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let out = ops::softmax(self.value(x), self.value(x).shape().len().max(1) - 1)?;
        Ok(self.push_op(out, Op::Softmax(x), &[x]))
    }

    /// Scalar mean cross-entropy over rows whose target is not `ignore`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], ignore: usize) -> Result<Var> {
        let loss = ops::cross_entropy_with_logits(self.value(logits), targets, ignore)?;
        let mut probs = ops::log_softmax(self.value(logits));
        probs.data_mut().iter_mut().for_each(|x| *x = x.exp());
        let count = targets.iter().filter(|&&t| t != ignore).count();
        Ok(self.push_op(
            NdArray::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                ignore,
                probs,
                count,
            },
            &[logits],
        ))
    }

    /// Inverted dropout; identity in evaluation mode or at rate 0.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Var {
        let rng = match (&mut self.rng, rate > 0.0) {
            (Some(rng), true) => rng,
            _ => return x,
        };
        let mask = ops::dropout_mask(self.nodes[x.0].value.len(), rate, rng);
        let v = self.value(x);
        let data = v.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let out = NdArray::new(v.shape().to_vec(), data).expect("shape preserved");
        self.push_op(out, Op::Dropout { x, mask }, &[x])
    }

    /// Mean over a row range, giving a `[1, cols]` array.
    pub fn mean_rows(&mut self, x: Var, rows: Range<usize>) -> Result<Var> {
        let v = self.value(x);
        if rows.is_empty() || rows.end > v.rows() {
            return Err(Error::InvalidArgument(format!(
                "mean_rows range {rows:?} invalid for {} rows",
                v.rows()
            )));
        }
        let c = v.cols();
        let mut out = vec![0.0; c];
        for i in rows.clone() {
            for (o, x) in out.iter_mut().zip(v.row(i)) {
                *o += x;
            }
        }
        let n = rows.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        let out = NdArray::new(vec![1, c], out)?;
        Ok(self.push_op(out, Op::MeanRows { x, rows }, &[x]))
    }

    /// Per-block arithmetic mean of rows, one output row per block.
    pub fn block_mean(&mut self, x: Var, blocks: Vec<Range<usize>>) -> Result<Var> {
        let v = self.value(x);
        let c = v.cols();
        let mut out = NdArray::zeros(&[blocks.len(), c]);
        for (b, r) in blocks.iter().enumerate() {
            if r.is_empty() || r.end > v.rows() {
                return Err(Error::InvalidArgument(format!("block {r:?} invalid")));
            }
            let n = r.len() as f64;
            let row = out.row_mut(b);
            for i in r.clone() {
                for (o, x) in row.iter_mut().zip(v.row(i)) {
                    *o += x / n;
                }
            }
        }
        Ok(self.push_op(out, Op::BlockMean { x, blocks }, &[x]))
    }

    /// Multi-head attention core; see [`crate::attention::kernel`].
    #[allow(clippy::too_many_arguments)]
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        bias: Option<Var>,
        heads: usize,
        plan: Rc<AttentionPlan>,
        dropout_rate: f64,
        label: &str,
    ) -> Result<Var> {
        let dropout = match (&mut self.rng, dropout_rate > 0.0) {
            (Some(rng), true) => Some(ops::dropout_mask(
                heads * plan.score_count(),
                dropout_rate,
                rng,
            )),
            _ => None,
        };
        let fwd = attend(
            self.value(q),
            self.value(k),
            self.value(v),
            heads,
            &plan,
            bias.map(|b| self.value(b)),
            dropout.as_deref(),
        )?;
        self.score_evals += plan.score_count();
        if self.record_attention {
            self.recorded.push(RecordedAttention {
                label: label.to_string(),
                heads,
                plan: Rc::clone(&plan),
                probs: fwd.probs.clone(),
            });
        }
        let mut inputs = vec![q, k, v];
        inputs.extend(bias);
        let node = AttentionNode {
            q,
            k,
            v,
            bias,
            heads,
            plan,
            probs: fwd.probs,
            dropout,
        };
        Ok(self.push_op(fwd.output, Op::Attention(Box::new(node)), &inputs))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push_op(NdArray::scalar(s), Op::Sum(x), &[x])
    }

    /// Reverse sweep from a scalar `loss`. Returns gradients indexed by node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<NdArray>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(NdArray::full(self.value(loss).shape(), 1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<NdArray>], target: Var, delta: NdArray) {
        if !self.nodes[target.0].needs_grad {
            return;
        }
        match &mut grads[target.0] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, idx: usize, g: &NdArray, grads: &mut [Option<NdArray>]) {
        let out = &self.nodes[idx].value;
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                if self.wants(*a) {
                    // dA = G · Bᵀ
                    let mut da = NdArray::zeros(&[m, k]);
                    gemm(m, n, k, g.data(), (n as isize, 1), bv.data(), (1, n as isize), da.data_mut(), false);
                    self.accumulate(grads, *a, da);
                }
                if self.wants(*b) {
                    // dB = Aᵀ · G
                    let mut db = NdArray::zeros(&[k, n]);
                    gemm(k, m, n, av.data(), (1, k as isize), g.data(), (n as isize, 1), db.data_mut(), false);
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let d = ops::mul(g, self.value(*b)).expect("same shape");
                    self.accumulate(grads, *a, d);
                }
                if self.wants(*b) {
                    let d = ops::mul(g, self.value(*a)).expect("same shape");
                    self.accumulate(grads, *b, d);
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.map(|x| x * s)),
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                if self.wants(*row) {
                    let mut d = NdArray::zeros(self.value(*row).shape());
                    for i in 0..g.rows() {
                        for (o, x) in d.data_mut().iter_mut().zip(g.row(i)) {
                            *o += x;
                        }
                    }
                    self.accumulate(grads, *row, d);
                }
            }
            Op::Relu(a) => {
                let data = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(gx, y)| if *y > 0.0 { *gx } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, NdArray::new(g.shape().to_vec(), data).unwrap());
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose()),
            Op::Reshape(a) => {
                let shape = self.value(*a).shape().to_vec();
                self.accumulate(grads, *a, g.clone().reshape(&shape).unwrap());
            }
            Op::ConcatRows(parts) => {
                let c = g.cols();
                let mut start = 0;
                for p in parts {
                    let rows = self.value(*p).rows();
                    if self.wants(*p) {
                        let d = NdArray::new(
                            vec![rows, c],
                            g.data()[start * c..(start + rows) * c].to_vec(),
                        )
                        .unwrap();
                        self.accumulate(grads, *p, d);
                    }
                    start += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if self.wants(*p) {
                        let d = NdArray::from_fn(g.rows(), w, |i, j| g.get(i, start + j));
                        self.accumulate(grads, *p, d);
                    }
                    start += w;
                }
            }
            Op::SliceRows(a, rows) => {
                let mut d = NdArray::zeros(self.value(*a).shape());
                let c = d.cols();
                d.data_mut()[rows.start * c..rows.end * c].copy_from_slice(g.data());
                self.accumulate(grads, *a, d);
            }
            Op::SliceCols(a, cols) => {
                let mut d = NdArray::zeros(self.value(*a).shape());
                for i in 0..g.rows() {
                    d.row_mut(i)[cols.clone()].copy_from_slice(g.row(i));
                }
                self.accumulate(grads, *a, d);
            }
            Op::Gather { table, ids } => {
                let mut d = NdArray::zeros(self.value(*table).shape());
                for (i, &id) in ids.iter().enumerate() {
                    for (o, x) in d.row_mut(id).iter_mut().zip(g.row(i)) {
                        *o += x;
                    }
                }
                self.accumulate(grads, *table, d);
            }
            Op::RmsNorm { x, gain, inv_rms } => {
                let xv = self.value(*x);
                let gv = self.value(*gain);
                let d = xv.cols() as f64;
                if self.wants(*x) {
                    let mut dx = NdArray::zeros(xv.shape());
                    for i in 0..xv.rows() {
                        let r = inv_rms[i];
                        let xr = xv.row(i);
                        let gr = g.row(i);
                        let dot: f64 = (0..xr.len()).map(|j| gv.data()[j] * gr[j] * xr[j]).sum();
                        let coef = r * r * r * dot / d;
                        for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
                            *o = r * gv.data()[j] * gr[j] - coef * xr[j];
                        }
                    }
                    self.accumulate(grads, *x, dx);
                }
                if self.wants(*gain) {
                    let mut dg = NdArray::zeros(gv.shape());
                    for i in 0..xv.rows() {
                        let r = inv_rms[i];
                        for ((o, xj), gj) in dg.data_mut().iter_mut().zip(xv.row(i)).zip(g.row(i)) {
                            *o += gj * xj * r;
                        }
                    }
                    self.accumulate(grads, *gain, dg);
                }
            }
            Op::Softmax(a) => {
                let mut d = NdArray::zeros(out.shape());
                for i in 0..out.rows() {
                    let y = out.row(i);
                    let gr = g.row(i);
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for (j, o) in d.row_mut(i).iter_mut().enumerate() {
                        *o = y[j] * (gr[j] - dot);
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::CrossEntropy {
                logits,
                targets,
                ignore,
                probs,
                count,
            } => {
                let scale = g.data()[0] / *count as f64;
                let mut d = NdArray::zeros(probs.shape());
                for (i, &t) in targets.iter().enumerate() {
                    if t == *ignore {
                        continue;
                    }
                    let row = d.row_mut(i);
                    for (o, p) in row.iter_mut().zip(probs.row(i)) {
                        *o = p * scale;
                    }
                    row[t] -= scale;
                }
                self.accumulate(grads, *logits, d);
            }
            Op::Dropout { x, mask } => {
                let data = g.data().iter().zip(mask).map(|(a, m)| a * m).collect();
                self.accumulate(grads, *x, NdArray::new(g.shape().to_vec(), data).unwrap());
            }
            Op::MeanRows { x, rows } => {
                let mut d = NdArray::zeros(self.value(*x).shape());
                let n = rows.len() as f64;
                for i in rows.clone() {
                    for (o, gx) in d.row_mut(i).iter_mut().zip(g.row(0)) {
                        *o = gx / n;
                    }
                }
                self.accumulate(grads, *x, d);
            }
            Op::BlockMean { x, blocks } => {
                let mut d = NdArray::zeros(self.value(*x).shape());
                for (b, r) in blocks.iter().enumerate() {
                    let n = r.len() as f64;
                    for i in r.clone() {
                        for (o, gx) in d.row_mut(i).iter_mut().zip(g.row(b)) {
                            *o += gx / n;
                        }
                    }
                }
                self.accumulate(grads, *x, d);
            }
            Op::Attention(node) => {
                let ag = attend_backward(
                    self.value(node.q),
                    self.value(node.k),
                    self.value(node.v),
                    node.heads,
                    &node.plan,
                    node.bias.map(|b| self.value(b).shape()),
                    &node.probs,
                    node.dropout.as_deref(),
                    g,
                );
                self.accumulate(grads, node.q, ag.q);
                self.accumulate(grads, node.k, ag.k);
                self.accumulate(grads, node.v, ag.v);
                if let (Some(b), Some(db)) = (node.bias, ag.bias) {
                    self.accumulate(grads, b, db);
                }
            }
            Op::Sum(a) => {
                let shape = self.value(*a).shape().to_vec();
                self.accumulate(grads, *a, NdArray::full(&shape, g.data()[0]));
            }
        }
    }

    /// Trainable parameters that took part in this graph, in first-use order.
    pub fn param_vars(&self) -> &[(ParamId, Var)] {
        &self.params
    }
}

pub struct Gradients {
    grads: Vec<Option<NdArray>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&NdArray> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Sums gradients per parameter (a parameter used twice gets both
    /// contributions). Parameters that did not reach the loss are omitted.
    pub fn param_grads(mut self, graph: &Graph<'_>) -> Vec<(ParamId, NdArray)> {
        let mut out: Vec<(ParamId, NdArray)> = Vec::new();
        for &(id, var) in graph.param_vars() {
            let Some(g) = self.grads.get_mut(var.0).and_then(Option::take) else {
                continue;
            };
            match out.iter_mut().find(|(pid, _)| *pid == id) {
                Some((_, acc)) => acc.add_assign(&g),
                None => out.push((id, g)),
            }
        }
        out.sort_by_key(|(id, _)| *id);
        out
    }
}
