//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation applied to its variables. Calling
//! [`Graph::backward`] on a scalar node walks the tape in reverse and
//! accumulates adjoints for every node the loss depends on.

use std::collections::BTreeMap;
use std::fmt;

use super::ops;
use super::{NumericsError, ParamSet, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// An operation defined outside this module (the model losses).
///
/// `backward` receives the input values, this op's output and the adjoint of
/// the output, and returns one adjoint per input.
pub trait CustomOp: fmt::Debug {
    fn name(&self) -> &'static str;
    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor, NumericsError>;
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Tensor>;
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Gelu(Var),
    SoftmaxRows(Var),
    LogSumExpRows(Var),
    GatherRows(Var, Vec<usize>),
    MeanRowGroups(Var, Vec<Vec<usize>>),
    LogSumExpRowGroups(Var, Vec<Vec<usize>>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    LayerNorm(Var, Var, Var, f64),
    NormalizeRows(Var, Vec<bool>),
    GroupedOuter(Var, Var, usize),
    Sum(Var),
    Mean(Var),
    Custom(Box<dyn CustomOp>, Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// A leaf holding a constant input; it receives an adjoint but is not a
    /// parameter.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Binds a named parameter. Binding the same name twice returns the same
    /// node.
    pub fn param(&mut self, params: &ParamSet, name: &str) -> Result<Var, NumericsError> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let t = params
            .get(name)
            .ok_or_else(|| NumericsError::UnknownParam(name.to_string()))?
            .clone();
        let v = self.push(t, Op::Leaf);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn bound_params(&self) -> impl Iterator<Item = (&str, Var)> {
        self.params.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let v = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// `a * b^T`; linear layers store weights as `out x in`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let v = ops::matmul_t(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatMulT(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let v = ops::add(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let v = ops::sub(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let v = ops::hadamard(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var, NumericsError> {
        let v = ops::add_row(self.value(a), self.value(bias))?;
        Ok(self.push(v, Op::AddRow(a, bias)))
    }

    /// `x W^T + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NumericsError> {
        let y = self.matmul_t(x, w)?;
        self.add_row(y, b)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let v = ops::scale(self.value(a), factor);
        self.push(v, Op::Scale(a, factor))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = ops::tanh(self.value(a));
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = ops::sigmoid(self.value(a));
        self.push(v, Op::Sigmoid(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = ops::gelu(self.value(a));
        self.push(v, Op::Gelu(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = ops::softmax_rows(self.value(a));
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn logsumexp_rows(&mut self, a: Var) -> Result<Var, NumericsError> {
        let v = ops::logsumexp_rows(self.value(a))?;
        Ok(self.push(v, Op::LogSumExpRows(a)))
    }

    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Result<Var, NumericsError> {
        let v = ops::gather_rows(self.value(a), &idx)?;
        Ok(self.push(v, Op::GatherRows(a, idx)))
    }

    /// One output row per group: the mean of the listed input rows.
    pub fn mean_row_groups(&mut self, a: Var, groups: Vec<Vec<usize>>) -> Result<Var, NumericsError> {
        let src = self.value(a);
        let c = src.cols();
        let mut data = Vec::with_capacity(groups.len() * c);
        for g in &groups {
            if g.is_empty() || g.iter().any(|&i| i >= src.rows()) {
                return Err(NumericsError::Invalid {
                    op: "mean_row_groups",
                    msg: format!("bad row group {g:?} for {} rows", src.rows()),
                });
            }
            let mut acc = vec![0.0; c];
            for &i in g {
                for (a, &x) in acc.iter_mut().zip(src.row(i)) {
                    *a += x;
                }
            }
            let n = g.len() as f64;
            data.extend(acc.into_iter().map(|x| x / n));
        }
        let v = Tensor::matrix(groups.len(), c, data)?;
        Ok(self.push(v, Op::MeanRowGroups(a, groups)))
    }

    /// One output row per group: the column-wise log-sum-exp of the listed
    /// input rows.
    pub fn logsumexp_row_groups(&mut self, a: Var, groups: Vec<Vec<usize>>) -> Result<Var, NumericsError> {
        let src = self.value(a);
        let c = src.cols();
        let mut data = Vec::with_capacity(groups.len() * c);
        let mut col = Vec::new();
        for g in &groups {
            if g.is_empty() || g.iter().any(|&i| i >= src.rows()) {
                return Err(NumericsError::Invalid {
                    op: "logsumexp_row_groups",
                    msg: format!("bad row group {g:?} for {} rows", src.rows()),
                });
            }
            for j in 0..c {
                col.clear();
                col.extend(g.iter().map(|&i| src.at(i, j)));
                data.push(ops::logsumexp(&col));
            }
        }
        let v = Tensor::matrix(groups.len(), c, data)?;
        Ok(self.push(v, Op::LogSumExpRowGroups(a, groups)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = ops::concat_cols(&tensors)?;
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let v = ops::slice_cols(self.value(a), start, len)?;
        Ok(self.push(v, Op::SliceCols(a, start)))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var, NumericsError> {
        let v = ops::layer_norm(self.value(x), self.value(gain), self.value(bias), eps)?;
        Ok(self.push(v, Op::LayerNorm(x, gain, bias, eps)))
    }

    /// See [`ops::normalize_rows`]. Fallback rows carry no gradient.
    pub fn normalize_rows(&mut self, a: Var, eps: f64, min_mass: f64) -> Var {
        let (v, fallback) = ops::normalize_rows(self.value(a), eps, min_mass);
        self.push(v, Op::NormalizeRows(a, fallback))
    }

    pub fn grouped_outer(&mut self, a: Var, b: Var, groups: usize) -> Result<Var, NumericsError> {
        let v = ops::grouped_outer(self.value(a), self.value(b), groups)?;
        Ok(self.push(v, Op::GroupedOuter(a, b, groups)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let v = Tensor::scalar(t.sum() / t.len().max(1) as f64);
        self.push(v, Op::Mean(a))
    }

    pub fn custom(&mut self, op: Box<dyn CustomOp>, inputs: &[Var]) -> Result<Var, NumericsError> {
        let vals: Vec<&Tensor> = inputs.iter().map(|&i| self.value(i)).collect();
        let v = op.forward(&vals)?;
        Ok(self.push(v, Op::Custom(op, inputs.to_vec())))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericsError> {
        let out = self.value(loss);
        if !out.is_scalar() {
            return Err(NumericsError::NonScalarLoss(out.shape().to_vec()));
        }
        let mut adj: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::filled(out.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut adj);
            adj[idx] = Some(g);
        }

        let params = self
            .params
            .iter()
            .filter_map(|(name, v)| adj.get(v.0).and_then(|g| g.clone()).map(|g| (name.clone(), g)))
            .collect();
        Ok(Gradients { adjoints: adj, params })
    }

    fn propagate(&self, node: &Node, g: &Tensor, adj: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, t: Tensor| {
            let slot = &mut adj[v.0];
            match slot {
                Some(existing) => existing.add_assign(&t),
                None => {
                    let shape = self.nodes[v.0].value.shape().to_vec();
                    *slot = Some(t.reshaped(shape).expect("adjoint size matches value"));
                }
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                acc(*a, ops::matmul_t(g, bv).expect("shapes checked in forward"));
                acc(*b, ops::t_matmul(av, g).expect("shapes checked in forward"));
            }
            Op::MatMulT(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                acc(*a, ops::matmul(g, bv).expect("shapes checked in forward"));
                acc(*b, ops::t_matmul(g, av).expect("shapes checked in forward"));
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, ops::scale(g, -1.0));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                acc(*a, ops::hadamard(g, bv).expect("same shape"));
                acc(*b, ops::hadamard(g, av).expect("same shape"));
            }
            Op::AddRow(a, bias) => {
                acc(*a, g.clone());
                let c = g.cols();
                let mut db = vec![0.0; c];
                for (i, &x) in g.data().iter().enumerate() {
                    db[i % c] += x;
                }
                acc(*bias, Tensor::vector(db));
            }
            Op::Scale(a, f) => acc(*a, ops::scale(g, *f)),
            Op::Tanh(a) => {
                let y = &node.value;
                let d = y.data().iter().zip(g.data()).map(|(&y, &g)| g * (1.0 - y * y)).collect();
                acc(*a, Tensor::vector(d));
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                let d = y.data().iter().zip(g.data()).map(|(&y, &g)| g * y * (1.0 - y)).collect();
                acc(*a, Tensor::vector(d));
            }
            Op::Gelu(a) => {
                let x = val(*a);
                let d = x
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&x, &g)| g * ops::gelu_grad_scalar(x))
                    .collect();
                acc(*a, Tensor::vector(d));
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let c = y.cols();
                let mut d = vec![0.0; y.len()];
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let s = ops::dot(yr, gr);
                    for j in 0..c {
                        d[r * c + j] = yr[j] * (gr[j] - s);
                    }
                }
                acc(*a, Tensor::vector(d));
            }
            Op::LogSumExpRows(a) => {
                let x = val(*a);
                let y = &node.value;
                let c = x.cols();
                let mut d = vec![0.0; x.len()];
                for i in 0..x.rows() {
                    for j in 0..c {
                        d[i * c + j] = g.data()[j] * (x.at(i, j) - y.data()[j]).exp();
                    }
                }
                acc(*a, Tensor::vector(d));
            }
            Op::GatherRows(a, idx) => {
                let x = val(*a);
                let c = x.cols();
                let mut d = vec![0.0; x.len()];
                for (k, &i) in idx.iter().enumerate() {
                    for (dst, &src) in d[i * c..(i + 1) * c].iter_mut().zip(g.row(k)) {
                        *dst += src;
                    }
                }
                acc(*a, Tensor::vector(d));
            }
            Op::MeanRowGroups(a, groups) => {
                let x = val(*a);
                let c = x.cols();
                let mut d = vec![0.0; x.len()];
                for (k, grp) in groups.iter().enumerate() {
                    let w = 1.0 / grp.len() as f64;
                    for &i in grp {
                        for (dst, &src) in d[i * c..(i + 1) * c].iter_mut().zip(g.row(k)) {
                            *dst += w * src;
                        }
                    }
                }
                acc(*a, Tensor::vector(d));
            }
            Op::LogSumExpRowGroups(a, groups) => {
                let x = val(*a);
                let y = &node.value;
                let c = x.cols();
                let mut d = vec![0.0; x.len()];
                for (k, grp) in groups.iter().enumerate() {
                    for &i in grp {
                        for j in 0..c {
                            d[i * c + j] += g.at(k, j) * (x.at(i, j) - y.at(k, j)).exp();
                        }
                    }
                }
                acc(*a, Tensor::vector(d));
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = val(p).cols();
                    acc(p, ops::slice_cols(g, start, w).expect("slice within concat"));
                    start += w;
                }
            }
            Op::SliceCols(a, start) => {
                let x = val(*a);
                let (c, w) = (x.cols(), g.cols());
                let mut d = vec![0.0; x.len()];
                for r in 0..x.rows() {
                    d[r * c + start..r * c + start + w].copy_from_slice(g.row(r));
                }
                acc(*a, Tensor::vector(d));
            }
            Op::LayerNorm(x, gain, bias, eps) => {
                let xv = val(*x);
                let gv = val(*gain);
                let c = xv.cols();
                let n = c as f64;
                let mut dx = vec![0.0; xv.len()];
                let mut dgain = vec![0.0; c];
                let mut dbias = vec![0.0; c];
                let mut xhat = vec![0.0; c];
                let mut dxhat = vec![0.0; c];
                for r in 0..xv.rows() {
                    let row = xv.row(r);
                    let gr = g.row(r);
                    let mean = row.iter().sum::<f64>() / n;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                    let inv = 1.0 / (var + eps).sqrt();
                    for j in 0..c {
                        xhat[j] = (row[j] - mean) * inv;
                        dgain[j] += gr[j] * xhat[j];
                        dbias[j] += gr[j];
                        dxhat[j] = gr[j] * gv.data()[j];
                    }
                    let sum_d: f64 = dxhat.iter().sum();
                    let sum_dx: f64 = ops::dot(&dxhat, &xhat);
                    for j in 0..c {
                        dx[r * c + j] = inv / n * (n * dxhat[j] - sum_d - xhat[j] * sum_dx);
                    }
                }
                acc(*x, Tensor::vector(dx));
                acc(*gain, Tensor::vector(dgain));
                acc(*bias, Tensor::vector(dbias));
            }
            Op::NormalizeRows(a, fallback) => {
                let x = val(*a);
                let y = &node.value;
                let c = x.cols();
                let mut d = vec![0.0; x.len()];
                for r in 0..x.rows() {
                    if fallback[r] {
                        continue;
                    }
                    let s: f64 = x.row(r).iter().sum();
                    let gy = ops::dot(g.row(r), y.row(r));
                    for j in 0..c {
                        d[r * c + j] = (g.at(r, j) - gy) / s;
                    }
                }
                acc(*a, Tensor::vector(d));
            }
            Op::GroupedOuter(a, b, groups) => {
                let (av, bv) = (val(*a), val(*b));
                let dm = av.cols();
                let bs = dm / groups;
                let mut da = vec![0.0; av.len()];
                let mut db = vec![0.0; bv.len()];
                for r in 0..av.rows() {
                    let (ar, br, gr) = (av.row(r), bv.row(r), g.row(r));
                    for grp in 0..*groups {
                        for i in 0..bs {
                            for j in 0..bs {
                                let gij = gr[grp * bs * bs + i * bs + j];
                                da[r * dm + grp * bs + i] += gij * br[grp * bs + j];
                                db[r * dm + grp * bs + j] += gij * ar[grp * bs + i];
                            }
                        }
                    }
                }
                acc(*a, Tensor::vector(da));
                acc(*b, Tensor::vector(db));
            }
            Op::Sum(a) => {
                let x = val(*a);
                acc(*a, Tensor::filled(&[x.len()], g.item()));
            }
            Op::Mean(a) => {
                let x = val(*a);
                acc(*a, Tensor::filled(&[x.len()], g.item() / x.len().max(1) as f64));
            }
            Op::Custom(op, inputs) => {
                let vals: Vec<&Tensor> = inputs.iter().map(|&i| val(i)).collect();
                let grads = op.backward(&vals, &node.value, g);
                for (&i, d) in inputs.iter().zip(grads) {
                    acc(i, d);
                }
            }
        }
    }
}

/// Adjoints from one reverse sweep.
#[derive(Debug)]
pub struct Gradients {
    adjoints: Vec<Option<Tensor>>,
    params: BTreeMap<String, Tensor>,
}

impl Gradients {
    /// Adjoint of an arbitrary node, if the loss depends on it.
    pub fn of(&self, v: Var) -> Option<&Tensor> {
        self.adjoints.get(v.0).and_then(Option::as_ref)
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn into_params(self) -> BTreeMap<String, Tensor> {
        self.params
    }
}

/// Exact derivatives of `loss` with respect to every trainable tensor in
/// `params`. Tensors the loss does not reach get zero gradients.
pub fn gradient_of(
    graph: &Graph,
    loss: Var,
    params: &ParamSet,
) -> Result<BTreeMap<String, Tensor>, NumericsError> {
    let mut grads = graph.backward(loss)?.into_params();
    let mut out = BTreeMap::new();
    for (name, p) in params.iter() {
        if !p.trainable {
            continue;
        }
        let g = grads
            .remove(name)
            .unwrap_or_else(|| Tensor::zeros(p.tensor.shape()));
        out.insert(name.to_string(), g);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn single(name: &str, t: Tensor) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert(name, t, true).unwrap();
        p
    }

    #[test]
    fn square_gradient() {
        let params = single("x", Tensor::scalar(3.0));
        let mut g = Graph::new();
        let x = g.param(&params, "x").unwrap();
        let y = g.mul(x, x).unwrap();
        let grads = gradient_of(&g, y, &params).unwrap();
        assert_eq!(grads["x"].item(), 6.0);
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let params = single("w", Tensor::scalar(0.0));
        let mut g = Graph::new();
        let w = g.param(&params, "w").unwrap();
        let y = g.sigmoid(w);
        let grads = gradient_of(&g, y, &params).unwrap();
        assert_abs_diff_eq!(grads["w"].item(), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let params = single("w", Tensor::vector(vec![1.0, 2.0]));
        let mut g = Graph::new();
        let w = g.param(&params, "w").unwrap();
        let y = g.tanh(w);
        assert!(matches!(
            g.backward(y),
            Err(NumericsError::NonScalarLoss(_))
        ));
    }

    #[test]
    fn unreached_params_get_zero_gradient() {
        let mut params = single("a", Tensor::scalar(2.0));
        params.insert("b", Tensor::vector(vec![1.0, 1.0]), true).unwrap();
        let mut g = Graph::new();
        let a = g.param(&params, "a").unwrap();
        let y = g.scale(a, 4.0);
        let grads = gradient_of(&g, y, &params).unwrap();
        assert_eq!(grads["a"].item(), 4.0);
        assert_eq!(grads["b"].data(), &[0.0, 0.0]);
    }
}
