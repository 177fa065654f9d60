//! Dynamic reverse-mode tape.

use std::sync::Arc;

use crate::error::{mismatch, GradError, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(&self) -> usize {
        self.0
    }
}

/// A differentiable operation defined outside this crate.
///
/// `forward` runs once when the op is recorded; `backward` receives the
/// upstream gradient of the output and returns one gradient per input
/// (`None` when an input receives nothing).
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;
    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor>;
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>>;
}

/// Running statistics produced by a training-mode batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance of the batch.
    pub var: Vec<f64>,
    pub count: usize,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Arc<Vec<f64>>),
    Concat(Vec<Var>, usize),
    Relu(Var),
    Abs(Var),
    Gather(Var, Arc<Vec<usize>>),
    SegmentMean { x: Var, ids: Arc<Vec<usize>>, counts: Vec<usize> },
    RowL2(Var),
    Sum(Var),
    L1Sum(Var),
    Frobenius(Var),
    BatchNormTrain { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    BatchNormEval { x: Var, gamma: Var, beta: Var, mean: Vec<f64>, inv_std: Vec<f64> },
    Custom(Arc<dyn CustomOp>, Vec<Var>),
}

struct Node {
    value: Tensor,
    op: Op,
    param: Option<usize>,
    requires_grad: bool,
}

/// Gradients of one backward pass, indexed by node.
pub struct Grads {
    grads: Vec<Option<Vec<f64>>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
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

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            param: None,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            param: None,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable leaf that is not a stored parameter.
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            param: None,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf bound to a stored parameter; gradients flow back to it through
    /// [`ParamStore::accumulate`].
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let id = store.id(name)?;
        let p = store.by_id(id);
        self.nodes.push(Node {
            value: p.value.clone(),
            op: Op::Leaf,
            param: Some(id),
            requires_grad: p.trainable,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub(crate) fn param_leaves(&self) -> impl Iterator<Item = (Var, usize)> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.map(|p| (Var(i), p)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.value(a).dims2();
        let (k2, m) = self.value(b).dims2();
        if k != k2 {
            return Err(mismatch("matmul", format!("{n}x{k} by {k2}x{m}")));
        }
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let row = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let x = ad[i * k + p];
                if x == 0.0 {
                    continue;
                }
                for (o, &y) in row.iter_mut().zip(&bd[p * m..(p + 1) * m]) {
                    *o += x * y;
                }
            }
        }
        let t = Tensor::matrix(n, m, out)?;
        Ok(self.push(t, Op::MatMul(a, b), &[a, b]))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(mismatch(
                op,
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(self.value(a).shape().to_vec(), data).expect("same shape")
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let data = self.value(a).data().iter().map(|&x| f(x)).collect();
        Tensor::new(self.value(a).shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let t = self.zip_map(a, b, |x, y| x + y);
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let t = self.zip_map(a, b, |x, y| x - y);
        Ok(self.push(t, Op::Sub(a, b), &[a, b]))
    }

    /// `a + 1 * bias` with `bias` broadcast over rows.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (n, m) = self.value(a).dims2();
        if self.value(bias).len() != m {
            return Err(mismatch("add_row", format!("bias of {} for {m} columns", self.value(bias).len())));
        }
        let bd = self.value(bias).data().to_vec();
        let mut data = self.value(a).data().to_vec();
        for i in 0..n {
            for (x, b) in data[i * m..(i + 1) * m].iter_mut().zip(&bd) {
                *x += b;
            }
        }
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(t, Op::AddRow(a, bias), &[a, bias]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.map(a, |x| x * s);
        self.push(t, Op::Scale(a, s), &[a])
    }

    /// Element-wise product with a constant of the same size.
    pub fn mul_const(&mut self, a: Var, c: Vec<f64>) -> Result<Var> {
        if c.len() != self.value(a).len() {
            return Err(mismatch("mul_const", format!("{} values for {}", c.len(), self.value(a).len())));
        }
        let data = self.value(a).data().iter().zip(&c).map(|(x, y)| x * y).collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(t, Op::MulConst(a, Arc::new(c)), &[a]))
    }

    /// Concatenate matrices along axis 0 (rows) or 1 (columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() || axis > 1 {
            return Err(mismatch("concat", format!("{} parts on axis {axis}", parts.len())));
        }
        let dims: Vec<(usize, usize)> = parts.iter().map(|&p| self.value(p).dims2()).collect();
        let t = if axis == 0 {
            let m = dims[0].1;
            if dims.iter().any(|d| d.1 != m) {
                return Err(mismatch("concat", format!("column counts {dims:?}")));
            }
            let data: Vec<f64> = parts.iter().flat_map(|&p| self.value(p).data().iter().copied()).collect();
            Tensor::matrix(data.len() / m.max(1), m, data)?
        } else {
            let n = dims[0].0;
            if dims.iter().any(|d| d.0 != n) {
                return Err(mismatch("concat", format!("row counts {dims:?}")));
            }
            let m: usize = dims.iter().map(|d| d.1).sum();
            let mut data = Vec::with_capacity(n * m);
            for i in 0..n {
                for &p in parts {
                    data.extend_from_slice(self.value(p).row(i));
                }
            }
            Tensor::matrix(n, m, data)?
        };
        Ok(self.push(t, Op::Concat(parts.to_vec(), axis), parts))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.map(a, |x| x.max(0.0));
        self.push(t, Op::Relu(a), &[a])
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let t = self.map(a, f64::abs);
        self.push(t, Op::Abs(a), &[a])
    }

    /// Rows of `a` picked by `index`.
    pub fn gather_rows(&mut self, a: Var, index: Arc<Vec<usize>>) -> Result<Var> {
        let (n, m) = self.value(a).dims2();
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(index.len() * m);
        for &i in index.iter() {
            if i >= n {
                return Err(GradError::IndexOutOfRange { index: i, rows: n });
            }
            data.extend_from_slice(&src[i * m..(i + 1) * m]);
        }
        let t = Tensor::matrix(index.len(), m, data)?;
        Ok(self.push(t, Op::Gather(a, index), &[a]))
    }

    /// Mean of the rows sharing a segment id; `segments` rows out.
    pub fn segment_mean(&mut self, a: Var, ids: Arc<Vec<usize>>, segments: usize) -> Result<Var> {
        let (n, m) = self.value(a).dims2();
        if ids.len() != n {
            return Err(mismatch("segment_mean", format!("{} ids for {n} rows", ids.len())));
        }
        let mut counts = vec![0usize; segments];
        for &s in ids.iter() {
            if s >= segments {
                return Err(GradError::IndexOutOfRange { index: s, rows: segments });
            }
            counts[s] += 1;
        }
        let src = self.value(a).data();
        let mut data = vec![0.0; segments * m];
        for (i, &s) in ids.iter().enumerate() {
            for j in 0..m {
                data[s * m + j] += src[i * m + j];
            }
        }
        for s in 0..segments {
            if counts[s] > 0 {
                let inv = 1.0 / counts[s] as f64;
                for x in &mut data[s * m..(s + 1) * m] {
                    *x *= inv;
                }
            }
        }
        let t = Tensor::matrix(segments, m, data)?;
        Ok(self.push(t, Op::SegmentMean { x: a, ids, counts }, &[a]))
    }

    /// Euclidean norm of every row, shape `[rows, 1]`.
    pub fn row_l2(&mut self, a: Var) -> Var {
        let (n, _) = self.value(a).dims2();
        let data = (0..n)
            .map(|i| self.value(a).row(i).iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        let t = Tensor::matrix(n, 1, data).expect("shape");
        self.push(t, Op::RowL2(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let t = Tensor::scalar(self.value(a).data().iter().sum());
        self.push(t, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn l1_sum(&mut self, a: Var) -> Var {
        let t = Tensor::scalar(self.value(a).data().iter().map(|x| x.abs()).sum());
        self.push(t, Op::L1Sum(a), &[a])
    }

    pub fn frobenius(&mut self, a: Var) -> Var {
        let t = Tensor::scalar(self.value(a).data().iter().map(|x| x * x).sum::<f64>().sqrt());
        self.push(t, Op::Frobenius(a), &[a])
    }

    fn bn_check(&self, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize)> {
        let (n, m) = self.value(x).dims2();
        if self.value(gamma).len() != m || self.value(beta).len() != m {
            return Err(mismatch("batchnorm", format!("affine sizes for {m} channels")));
        }
        if n == 0 {
            return Err(mismatch("batchnorm", "empty batch"));
        }
        Ok((n, m))
    }

    /// Batch norm over rows with batch statistics.
    pub fn batchnorm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats)> {
        let (n, m) = self.bn_check(x, gamma, beta)?;
        let xd = self.value(x).data();
        let mut mean = vec![0.0; m];
        for i in 0..n {
            for j in 0..m {
                mean[j] += xd[i * m + j];
            }
        }
        mean.iter_mut().for_each(|v| *v /= n as f64);
        let mut var = vec![0.0; m];
        for i in 0..n {
            for j in 0..m {
                let d = xd[i * m + j] - mean[j];
                var[j] += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v /= n as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; n * m];
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                let h = (xd[i * m + j] - mean[j]) * inv_std[j];
                xhat[i * m + j] = h;
                out[i * m + j] = g[j] * h + b[j];
            }
        }
        let t = Tensor::new(self.value(x).shape().to_vec(), out)?;
        let stats = BatchStats { mean, var, count: n };
        let v = self.push(t, Op::BatchNormTrain { x, gamma, beta, xhat, inv_std }, &[x, gamma, beta]);
        Ok((v, stats))
    }

    /// Batch norm with fixed running statistics.
    pub fn batchnorm_eval(&mut self, x: Var, gamma: Var, beta: Var, mean: &[f64], var: &[f64], eps: f64) -> Result<Var> {
        let (n, m) = self.bn_check(x, gamma, beta)?;
        if mean.len() != m || var.len() != m {
            return Err(mismatch("batchnorm", "running statistics size"));
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let xd = self.value(x).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[i * m + j] = g[j] * (xd[i * m + j] - mean[j]) * inv_std[j] + b[j];
            }
        }
        let t = Tensor::new(self.value(x).shape().to_vec(), out)?;
        let op = Op::BatchNormEval {
            x,
            gamma,
            beta,
            mean: mean.to_vec(),
            inv_std,
        };
        Ok(self.push(t, op, &[x, gamma, beta]))
    }

    pub fn custom(&mut self, op: Arc<dyn CustomOp>, inputs: &[Var]) -> Result<Var> {
        let vals: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
        let t = op.forward(&vals)?;
        Ok(self.push(t, Op::Custom(op, inputs.to_vec()), inputs))
    }

    /// Gradients of a one-element `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        if !self.value(loss).is_scalar() {
            return Err(GradError::NonScalarLoss(self.value(loss).shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[id] = Some(g);
        }
        Ok(Grads { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let mut acc = |v: Var, delta: &dyn Fn(&mut [f64])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
            delta(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (n, k) = self.value(*a).dims2();
                let m = self.value(*b).cols();
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &|ga| {
                    for i in 0..n {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..m {
                                s += g[i * m + j] * bd[p * m + j];
                            }
                            ga[i * k + p] += s;
                        }
                    }
                });
                acc(*b, &|gb| {
                    for i in 0..n {
                        for p in 0..k {
                            let x = ad[i * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            for j in 0..m {
                                gb[p * m + j] += x * g[i * m + j];
                            }
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &|ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                acc(*b, &|gb| gb.iter_mut().zip(g).for_each(|(x, y)| *x += y));
            }
            Op::Sub(a, b) => {
                acc(*a, &|ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                acc(*b, &|gb| gb.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            Op::AddRow(a, bias) => {
                let m = self.value(*bias).len();
                acc(*a, &|ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                acc(*bias, &|gb| {
                    for row in g.chunks(m) {
                        gb.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                    }
                });
            }
            Op::Scale(a, s) => acc(*a, &|ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += s * y)),
            Op::MulConst(a, c) => acc(*a, &|ga| {
                for ((x, y), c) in ga.iter_mut().zip(g).zip(c.iter()) {
                    *x += y * c;
                }
            }),
            Op::Concat(parts, axis) => {
                let total = node.value.cols();
                let mut row_off = 0;
                let mut col_off = 0;
                for &p in parts {
                    let (n, m) = self.value(p).dims2();
                    if *axis == 0 {
                        let start = row_off * total;
                        acc(p, &|gp| gp.iter_mut().zip(&g[start..start + n * m]).for_each(|(x, y)| *x += y));
                        row_off += n;
                    } else {
                        let c0 = col_off;
                        acc(p, &|gp| {
                            for i in 0..n {
                                for j in 0..m {
                                    gp[i * m + j] += g[i * total + c0 + j];
                                }
                            }
                        });
                        col_off += m;
                    }
                }
            }
            Op::Relu(a) => {
                let xd = self.value(*a).data();
                acc(*a, &|ga| {
                    for i in 0..ga.len() {
                        if xd[i] > 0.0 {
                            ga[i] += g[i];
                        }
                    }
                });
            }
            Op::Abs(a) => {
                let xd = self.value(*a).data();
                acc(*a, &|ga| {
                    for i in 0..ga.len() {
                        ga[i] += sign(xd[i]) * g[i];
                    }
                });
            }
            Op::Gather(a, index) => {
                let m = self.value(*a).cols();
                acc(*a, &|ga| {
                    for (r, &i) in index.iter().enumerate() {
                        for j in 0..m {
                            ga[i * m + j] += g[r * m + j];
                        }
                    }
                });
            }
            Op::SegmentMean { x, ids, counts } => {
                let m = self.value(*x).cols();
                acc(*x, &|gx| {
                    for (i, &s) in ids.iter().enumerate() {
                        let inv = 1.0 / counts[s] as f64;
                        for j in 0..m {
                            gx[i * m + j] += g[s * m + j] * inv;
                        }
                    }
                });
            }
            Op::RowL2(a) => {
                let m = self.value(*a).cols();
                let xd = self.value(*a).data();
                let norms = node.value.data();
                acc(*a, &|ga| {
                    for (i, &nrm) in norms.iter().enumerate() {
                        if nrm > 0.0 {
                            for j in 0..m {
                                ga[i * m + j] += g[i] * xd[i * m + j] / nrm;
                            }
                        }
                    }
                });
            }
            Op::Sum(a) => acc(*a, &|ga| ga.iter_mut().for_each(|x| *x += g[0])),
            Op::L1Sum(a) => {
                let xd = self.value(*a).data();
                acc(*a, &|ga| ga.iter_mut().zip(xd).for_each(|(x, &v)| *x += sign(v) * g[0]));
            }
            Op::Frobenius(a) => {
                let nrm = node.value.item();
                let xd = self.value(*a).data();
                if nrm > 0.0 {
                    acc(*a, &|ga| ga.iter_mut().zip(xd).for_each(|(x, &v)| *x += g[0] * v / nrm));
                }
            }
            Op::BatchNormTrain { x, gamma, beta, xhat, inv_std } => {
                let (n, m) = self.value(*x).dims2();
                let gam = self.value(*gamma).data();
                let mut sum_g = vec![0.0; m];
                let mut sum_gx = vec![0.0; m];
                for i in 0..n {
                    for j in 0..m {
                        sum_g[j] += g[i * m + j];
                        sum_gx[j] += g[i * m + j] * xhat[i * m + j];
                    }
                }
                acc(*gamma, &|gg| gg.iter_mut().zip(&sum_gx).for_each(|(x, y)| *x += y));
                acc(*beta, &|gb| gb.iter_mut().zip(&sum_g).for_each(|(x, y)| *x += y));
                let nf = n as f64;
                acc(*x, &|gx| {
                    for i in 0..n {
                        for j in 0..m {
                            let k = i * m + j;
                            gx[k] += gam[j] * inv_std[j] / nf * (nf * g[k] - sum_g[j] - xhat[k] * sum_gx[j]);
                        }
                    }
                });
            }
            Op::BatchNormEval { x, gamma, beta, mean, inv_std } => {
                let (n, m) = self.value(*x).dims2();
                let gam = self.value(*gamma).data();
                let xd = self.value(*x).data();
                acc(*gamma, &|gg| {
                    for i in 0..n {
                        for j in 0..m {
                            gg[j] += g[i * m + j] * (xd[i * m + j] - mean[j]) * inv_std[j];
                        }
                    }
                });
                acc(*beta, &|gb| {
                    for i in 0..n {
                        for j in 0..m {
                            gb[j] += g[i * m + j];
                        }
                    }
                });
                acc(*x, &|gx| {
                    for i in 0..n {
                        for j in 0..m {
                            gx[i * m + j] += g[i * m + j] * gam[j] * inv_std[j];
                        }
                    }
                });
            }
            Op::Custom(op, inputs) => {
                let vals: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
                let gs = op.backward(&vals, &node.value, g);
                for (&v, gi) in inputs.iter().zip(gs) {
                    if let Some(gi) = gi {
                        acc(v, &|ga| ga.iter_mut().zip(&gi).for_each(|(x, y)| *x += y));
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::matrix(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn relu_example() {
        let mut t = Tape::new();
        let x = t.variable(m(1, 3, &[-1.0, 0.0, 2.0]));
        let y = t.relu(x);
        assert_eq!(t.value(y).data(), &[0.0, 0.0, 2.0]);
        let s = t.sum(y);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn segment_mean_example() {
        let mut t = Tape::new();
        let x = t.variable(m(4, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]));
        let y = t.segment_mean(x, Arc::new(vec![0; 4]), 1).unwrap();
        assert_eq!(t.value(y).data(), &[4.0, 5.0]);
        let s = t.sum(y);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[0.25; 8]);
    }

    #[test]
    fn sum_gives_ones() {
        let mut t = Tape::new();
        let x = t.variable(m(2, 3, &[1.0, -2.0, 3.0, 0.5, 0.0, 9.0]));
        let s = t.sum(x);
        assert_eq!(t.backward(s).unwrap().get(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let x = t.variable(m(1, 2, &[1.0, 2.0]));
        assert!(matches!(t.backward(x), Err(GradError::NonScalarLoss(_))));
    }

    #[test]
    fn shape_errors() {
        let mut t = Tape::new();
        let a = t.variable(m(2, 3, &[0.0; 6]));
        let b = t.variable(m(2, 3, &[0.0; 6]));
        assert!(t.matmul(a, b).is_err());
        let c = t.variable(m(3, 2, &[0.0; 6]));
        assert!(t.add(a, c).is_err());
        assert!(matches!(
            t.gather_rows(a, Arc::new(vec![0, 2])),
            Err(GradError::IndexOutOfRange { index: 2, rows: 2 })
        ));
    }

    #[test]
    fn gather_scatter_conserves_gradient() {
        let mut t = Tape::new();
        let x = t.variable(m(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let y = t.gather_rows(x, Arc::new(vec![2, 0, 2, 1, 2])).unwrap();
        let w = t.constant(m(5, 2, &[0.3, -1.0, 2.0, 0.7, 1.5, -0.2, 0.9, 0.1, -3.0, 4.0]));
        let p = t.sub(y, w).unwrap();
        let q = t.frobenius(p);
        let gr = t.backward(q).unwrap();
        let total_up: f64 = {
            let pv = t.value(p).data();
            let n = t.value(q).item();
            pv.iter().map(|v| v / n).sum()
        };
        let total_down: f64 = gr.get(x).unwrap().iter().sum();
        assert!((total_up - total_down).abs() < 1e-12);
    }

    #[test]
    fn batchnorm_train_normalises() {
        let mut t = Tape::new();
        let data: Vec<f64> = (0..30).map(|i| ((i * 7919) % 31) as f64 * 0.37 - 2.0).collect();
        let x = t.variable(m(10, 3, &data));
        let g = t.constant(Tensor::filled(&[3], 1.0));
        let b = t.constant(Tensor::zeros(&[3]));
        let (y, _) = t.batchnorm_train(x, g, b, 0.0).unwrap();
        for j in 0..3 {
            let col: Vec<f64> = (0..10).map(|i| t.value(y).get(i, j)).collect();
            let mean = col.iter().sum::<f64>() / 10.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 10.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn concat_both_axes() {
        let mut t = Tape::new();
        let a = t.variable(m(2, 1, &[1.0, 2.0]));
        let b = t.variable(m(2, 2, &[3.0, 4.0, 5.0, 6.0]));
        let c = t.concat(&[a, b], 1).unwrap();
        assert_eq!(t.value(c).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let d = t.variable(m(1, 2, &[7.0, 8.0]));
        let e = t.concat(&[b, d], 0).unwrap();
        assert_eq!(t.value(e).shape(), &[3, 2]);
    }

    #[test]
    fn backward_twice_doubles() {
        let mut store = ParamStore::new();
        store.insert("p", m(1, 3, &[1.0, -2.0, 0.5]), true).unwrap();
        let mut t = Tape::new();
        let p = t.param(&store, "p").unwrap();
        let q = t.abs(p);
        let s = t.sum(q);
        let g1 = t.backward(s).unwrap();
        store.accumulate(&t, &g1);
        let once = store.grad("p").unwrap().to_vec();
        let g2 = t.backward(s).unwrap();
        store.accumulate(&t, &g2);
        let twice = store.grad("p").unwrap();
        for (a, b) in once.iter().zip(twice) {
            assert_eq!(2.0 * a, *b);
        }
    }
}
