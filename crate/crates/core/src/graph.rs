//! Dynamic reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation of one forward pass as a node holding
//! its output value. [`Graph::backward`] walks the nodes in reverse creation
//! order (which is a topological order) and accumulates gradients additively
//! at fan-out. The graph is rebuilt for every forward pass, so data-dependent
//! wiring such as per-row partner selection needs no special support.
//!
//! All node values are matrices `[rows × cols]`; scalars are `[1 × 1]`.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{dim_err, Error, Result};
use crate::param::{ParamId, Parameter};
use crate::tensor::{self, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    /// `[B×n] + [1×n]` broadcast over rows.
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `[B×n] * [B×1]`
    ScaleRows(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    /// `[B×n], [B×n] -> [B×1]`
    RowDot(Var, Var),
    /// Row `b` of the output is row `b` of `inputs[choice[b]]`.
    PickRows(Vec<Var>, Vec<usize>),
    /// `out[b] = a[b, idx[b]]`
    GatherCols(Var, Vec<usize>),
    /// Row lookup into an embedding table.
    Embed(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    /// Mean binary cross-entropy of `[B×1]` logits against fixed labels.
    BceWithLogits(Var, Vec<f64>),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Per-node and per-parameter gradients from one backward pass.
#[derive(Clone, Debug)]
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn of(&self, v: Var) -> Option<&Tensor> {
        self.nodes.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id)
    }

    pub fn params(&self) -> &BTreeMap<ParamId, Tensor> {
        &self.params
    }
}

/// Operation recorder for one forward pass.
#[derive(Clone, Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    grad_enabled: bool,
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
            grad_enabled: true,
        }
    }

    /// A graph that treats every parameter as a constant.
    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: false,
        }
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn check_finite(value: &Tensor, what: &str) -> Result<()> {
        if value.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what.into()))
        }
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        let value = if value.shape().len() == 1 {
            Tensor::new(&[1, value.len()], value.into_data()).expect("same len")
        } else {
            value
        };
        self.nodes.push(Node {
            value,
            op: Op::Constant,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Registers a parameter. Frozen parameters enter as constants.
    pub fn param(&mut self, p: &Parameter) -> Var {
        if p.frozen || !self.grad_enabled {
            return self.constant(p.value.clone());
        }
        self.nodes.push(Node {
            value: p.value.clone(),
            op: Op::Param(p.id),
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (x, b) = (self.value(a), self.value(bias));
        if b.rows() != 1 || b.cols() != x.cols() {
            return Err(dim_err!("row broadcast of {:?} onto {:?}", b.shape(), x.shape()));
        }
        let c = x.cols();
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(c) {
            for (o, bv) in row.iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        let value = Tensor::new(&[x.rows(), c], out)?;
        Ok(self.push(value, Op::AddRow(a, bias), &[a, bias]))
    }

    fn zip_same(&self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(dim_err!("{name} of {:?} and {:?}", x.shape(), y.shape()));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same(a, b, "add", |p, q| p + q)?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same(a, b, "sub", |p, q| p - q)?;
        Ok(self.push(value, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same(a, b, "mul", |p, q| p * q)?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale_rows(&mut self, a: Var, s: Var) -> Result<Var> {
        let (x, w) = (self.value(a), self.value(s));
        if w.cols() != 1 || w.rows() != x.rows() {
            return Err(dim_err!("row scaling of {:?} by {:?}", x.shape(), w.shape()));
        }
        let c = x.cols();
        let mut out = x.data().to_vec();
        for (row, &k) in out.chunks_mut(c).zip(w.data()) {
            for o in row {
                *o *= k;
            }
        }
        let value = Tensor::new(&[x.rows(), c], out)?;
        Ok(self.push(value, Op::ScaleRows(a, s), &[a, s]))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).map(|v| v * k);
        self.push(value, Op::Scale(a, k), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| if v > 0.0 { v } else { 0.0 });
        self.push(value, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a), &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).softmax()?;
        Ok(self.push(value, Op::SoftmaxRows(a), &[a]))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let x = self.value(a);
        if start >= end || end > x.cols() {
            return Err(dim_err!("column slice {start}..{end} of {:?}", x.shape()));
        }
        let mut data = Vec::with_capacity(x.rows() * (end - start));
        for r in 0..x.rows() {
            data.extend_from_slice(&x.row(r)[start..end]);
        }
        let value = Tensor::new(&[x.rows(), end - start], data)?;
        Ok(self.push(value, Op::SliceCols(a, start), &[a]))
    }

    pub fn column(&mut self, a: Var, j: usize) -> Result<Var> {
        self.slice_cols(a, j, j + 1)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| dim_err!("concat of zero tensors"))?;
        let rows = self.value(*first).rows();
        if let Some(bad) = parts.iter().find(|v| self.value(**v).rows() != rows) {
            return Err(dim_err!(
                "concat row mismatch: {} vs {:?}",
                rows,
                self.value(*bad).shape()
            ));
        }
        let total: usize = parts.iter().map(|v| self.value(*v).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for v in parts {
                data.extend_from_slice(self.value(*v).row(r));
            }
        }
        let value = Tensor::new(&[rows, total], data)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if !x.same_shape(y) {
            return Err(dim_err!("row dot of {:?} and {:?}", x.shape(), y.shape()));
        }
        let data = (0..x.rows())
            .map(|r| x.row(r).iter().zip(y.row(r)).map(|(p, q)| p * q).sum())
            .collect();
        let value = Tensor::new(&[x.rows(), 1], data)?;
        Ok(self.push(value, Op::RowDot(a, b), &[a, b]))
    }

    pub fn pick_rows(&mut self, inputs: &[Var], choice: &[usize]) -> Result<Var> {
        let first = inputs.first().ok_or_else(|| dim_err!("row pick from zero tensors"))?;
        let shape = self.value(*first).shape().to_vec();
        for v in inputs {
            if self.value(*v).shape() != shape.as_slice() {
                return Err(dim_err!("row pick over {:?} and {:?}", shape, self.value(*v).shape()));
            }
        }
        let rows = self.value(*first).rows();
        if choice.len() != rows || choice.iter().any(|&c| c >= inputs.len()) {
            return Err(dim_err!("row pick choice does not fit {} rows", rows));
        }
        let mut data = Vec::with_capacity(self.value(*first).len());
        for (r, &c) in choice.iter().enumerate() {
            data.extend_from_slice(self.value(inputs[c]).row(r));
        }
        let value = Tensor::new(&shape, data)?;
        Ok(self.push(value, Op::PickRows(inputs.to_vec(), choice.to_vec()), inputs))
    }

    pub fn gather_cols(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let x = self.value(a);
        if idx.len() != x.rows() || idx.iter().any(|&j| j >= x.cols()) {
            return Err(dim_err!("column gather does not fit {:?}", x.shape()));
        }
        let data = idx.iter().enumerate().map(|(r, &j)| x.get(r, j)).collect();
        let value = Tensor::new(&[x.rows(), 1], data)?;
        Ok(self.push(value, Op::GatherCols(a, idx.to_vec()), &[a]))
    }

    pub fn embed(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if indices.is_empty() {
            return Err(dim_err!("embedding lookup of zero rows"));
        }
        if let Some(bad) = indices.iter().find(|&&i| i >= t.rows()) {
            return Err(dim_err!("embedding index {bad} outside table {:?}", t.shape()));
        }
        let value = t.select_rows(indices);
        Ok(self.push(value, Op::Embed(table, indices.to_vec()), &[table]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let s = x.data().iter().sum::<f64>() / x.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a), &[a])
    }

    /// Numerically stable mean binary cross-entropy on logits.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[f64]) -> Result<Var> {
        let x = self.value(logits);
        if x.cols() != 1 || x.rows() != labels.len() {
            return Err(dim_err!(
                "BCE of logits {:?} against {} labels",
                x.shape(),
                labels.len()
            ));
        }
        let n = labels.len() as f64;
        let loss = x
            .data()
            .iter()
            .zip(labels)
            .map(|(&l, &y)| softplus(l) - y * l)
            .sum::<f64>()
            / n;
        let value = Tensor::scalar(loss);
        Self::check_finite(&value, "binary cross-entropy")?;
        Ok(self.push(value, Op::BceWithLogits(logits, labels.to_vec()), &[logits]))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Usage(
                "backward called on a variable this graph never produced (run the forward pass first)".into(),
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(dim_err!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut params = BTreeMap::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads, &mut params)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { nodes: grads, params })
    }

    fn propagate(
        &self,
        node: &Node,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
        params: &mut BTreeMap<ParamId, Tensor>,
    ) -> Result<()> {
        let mut acc = |v: Var, delta: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => {
                    for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                        *e += d;
                    }
                }
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Constant => {}
            Op::Param(id) => {
                params
                    .entry(*id)
                    .and_modify(|e: &mut Tensor| {
                        for (x, d) in e.data_mut().iter_mut().zip(g.data()) {
                            *x += d;
                        }
                    })
                    .or_insert_with(|| g.clone());
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.requires_grad(*a) {
                    let mut ga = vec![0.0; m * k];
                    tensor::matmul_nt_into(g.data(), bv.data(), &mut ga, m, n, k);
                    acc(*a, Tensor::new(&[m, k], ga)?);
                }
                if self.requires_grad(*b) {
                    let mut gb = vec![0.0; k * n];
                    tensor::matmul_tn_into(av.data(), g.data(), &mut gb, m, k, n);
                    acc(*b, Tensor::new(&[k, n], gb)?);
                }
            }
            Op::AddRow(a, bias) => {
                acc(*a, g.clone());
                let c = g.cols();
                let mut gb = vec![0.0; c];
                for row in g.data().chunks(c) {
                    for (o, v) in gb.iter_mut().zip(row) {
                        *o += v;
                    }
                }
                acc(*bias, Tensor::new(&[1, c], gb)?);
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
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, zip(g, bv, |p, q| p * q));
                acc(*b, zip(g, av, |p, q| p * q));
            }
            Op::ScaleRows(a, s) => {
                let (av, sv) = (self.value(*a), self.value(*s));
                let c = av.cols();
                let mut ga = g.data().to_vec();
                for (row, &k) in ga.chunks_mut(c).zip(sv.data()) {
                    for o in row {
                        *o *= k;
                    }
                }
                acc(*a, Tensor::new(av.shape(), ga)?);
                let gs = (0..av.rows())
                    .map(|r| g.row(r).iter().zip(av.row(r)).map(|(p, q)| p * q).sum())
                    .collect();
                acc(*s, Tensor::new(&[av.rows(), 1], gs)?);
            }
            Op::Scale(a, k) => acc(*a, g.map(|v| v * k)),
            Op::Relu(a) => {
                let x = self.value(*a);
                acc(*a, zip(g, x, |gv, xv| if xv > 0.0 { gv } else { 0.0 }));
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                acc(*a, zip(g, y, |gv, yv| gv * yv * (1.0 - yv)));
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let c = y.cols();
                let mut ga = vec![0.0; y.len()];
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for j in 0..c {
                        ga[r * c + j] = yr[j] * (gr[j] - dot);
                    }
                }
                acc(*a, Tensor::new(y.shape(), ga)?);
            }
            Op::SliceCols(a, start) => {
                let x = self.value(*a);
                let (c, w) = (x.cols(), g.cols());
                let mut ga = vec![0.0; x.len()];
                for r in 0..x.rows() {
                    ga[r * c + start..r * c + start + w].copy_from_slice(g.row(r));
                }
                acc(*a, Tensor::new(x.shape(), ga)?);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for v in parts {
                    let x = self.value(*v);
                    let w = x.cols();
                    let mut gv = Vec::with_capacity(x.len());
                    for r in 0..x.rows() {
                        gv.extend_from_slice(&g.row(r)[offset..offset + w]);
                    }
                    offset += w;
                    acc(*v, Tensor::new(x.shape(), gv)?);
                }
            }
            Op::RowDot(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let c = av.cols();
                let mut ga = vec![0.0; av.len()];
                let mut gb = vec![0.0; bv.len()];
                for r in 0..av.rows() {
                    let k = g.data()[r];
                    for j in 0..c {
                        ga[r * c + j] = k * bv.get(r, j);
                        gb[r * c + j] = k * av.get(r, j);
                    }
                }
                acc(*a, Tensor::new(av.shape(), ga)?);
                acc(*b, Tensor::new(bv.shape(), gb)?);
            }
            Op::PickRows(inputs, choice) => {
                let c = g.cols();
                for (which, v) in inputs.iter().enumerate() {
                    if !self.requires_grad(*v) || !choice.contains(&which) {
                        continue;
                    }
                    let mut gv = vec![0.0; g.len()];
                    for (r, &ch) in choice.iter().enumerate() {
                        if ch == which {
                            gv[r * c..(r + 1) * c].copy_from_slice(g.row(r));
                        }
                    }
                    acc(*v, Tensor::new(g.shape(), gv)?);
                }
            }
            Op::GatherCols(a, idx) => {
                let x = self.value(*a);
                let c = x.cols();
                let mut ga = vec![0.0; x.len()];
                for (r, &j) in idx.iter().enumerate() {
                    ga[r * c + j] = g.data()[r];
                }
                acc(*a, Tensor::new(x.shape(), ga)?);
            }
            Op::Embed(table, indices) => {
                let t = self.value(*table);
                let c = t.cols();
                let mut gt = vec![0.0; t.len()];
                for (r, &i) in indices.iter().enumerate() {
                    for (o, v) in gt[i * c..(i + 1) * c].iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                acc(*table, Tensor::new(t.shape(), gt)?);
            }
            Op::Sum(a) => {
                let x = self.value(*a);
                acc(*a, Tensor::full(x.shape(), g.data()[0]));
            }
            Op::Mean(a) => {
                let x = self.value(*a);
                acc(*a, Tensor::full(x.shape(), g.data()[0] / x.len() as f64));
            }
            Op::BceWithLogits(a, labels) => {
                let x = self.value(*a);
                let k = g.data()[0] / labels.len() as f64;
                let data = x
                    .data()
                    .iter()
                    .zip(labels)
                    .map(|(&l, &y)| k * (sigmoid(l) - y))
                    .collect();
                acc(*a, Tensor::new(x.shape(), data)?);
            }
        }
        Ok(())
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&p, &q)| f(p, q)).collect();
    Tensor::new(a.shape(), data).expect("same shape")
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param::ParamAlloc;

    #[test]
    fn sum_gives_ones() {
        let mut alloc = ParamAlloc::new(1);
        let w = alloc.matrix(2, 3, crate::param::Init::XavierUniform);
        let mut g = Graph::new();
        let v = g.param(&w);
        let loss = g.sum(v);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.param(w.id).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn half_square_norm_gives_w() {
        let mut alloc = ParamAlloc::new(2);
        let w = alloc.matrix(3, 2, crate::param::Init::XavierUniform);
        let mut g = Graph::new();
        let v = g.param(&w);
        let sq = g.mul(v, v).unwrap();
        let s = g.sum(sq);
        let loss = g.scale(s, 0.5);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.param(w.id).unwrap(), &w.value);
    }

    #[test]
    fn fan_out_accumulates() {
        let mut alloc = ParamAlloc::new(3);
        let w = alloc.matrix(1, 4, crate::param::Init::XavierUniform);
        let mut g = Graph::new();
        let v = g.param(&w);
        let a = g.add(v, v).unwrap();
        let loss = g.sum(a);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.param(w.id).unwrap().data(), &[2.0; 4]);
    }

    #[test]
    fn frozen_params_get_no_gradient() {
        let mut alloc = ParamAlloc::new(4);
        let mut w = alloc.matrix(2, 2, crate::param::Init::XavierUniform);
        w.frozen = true;
        let u = alloc.matrix(2, 2, crate::param::Init::XavierUniform);
        let mut g = Graph::new();
        let (vw, vu) = (g.param(&w), g.param(&u));
        let p = g.mul(vw, vu).unwrap();
        let loss = g.sum(p);
        let grads = g.backward(loss).unwrap();
        assert!(grads.param(w.id).is_none());
        assert_eq!(grads.param(u.id).unwrap(), &w.value);
    }

    #[test]
    fn backward_before_forward_is_usage_error() {
        let g = Graph::new();
        assert!(matches!(g.backward(Var(0)), Err(Error::Usage(_))));
    }

    #[test]
    fn backward_needs_scalar() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::zeros(&[2, 2]));
        assert!(matches!(g.backward(c), Err(Error::Dimension(_))));
    }

    #[test]
    fn bce_matches_closed_form() {
        let mut g = Graph::new();
        let l = g.constant(Tensor::new(&[2, 1], vec![0.0, 2.0]).unwrap());
        let loss = g.bce_with_logits(l, &[1.0, 0.0]).unwrap();
        let expected = (libm::log(2.0) + libm::log(1.0 + libm::exp(2.0))) / 2.0;
        assert!((g.value(loss).data()[0] - expected).abs() < 1e-14);
    }
}
