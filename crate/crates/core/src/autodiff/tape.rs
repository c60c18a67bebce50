//! Dynamic computation tape.
//!
//! A [`Tape`] is rebuilt for every forward pass. Each primitive appends a node
//! holding its output value; [`Tape::backward`] walks the nodes once in reverse
//! and accumulates parameter gradients into a [`ParameterStore`].

use crate::autodiff::params::ParameterStore;
use crate::error::{DalError, Result};
use crate::stochastic::PriorSpec;
use crate::tensor::{matmul_into, matmul_nt_into, matmul_tn_into, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(usize),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Relu(Var),
    Softplus(Var),
    Exp(Var),
    Ln(Var),
    Square(Var),
    Sum(Var),
    MeanRows(Var),
    SegmentMean(Var, Vec<usize>),
    SoftmaxRows(Var),
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<f64> },
    Conv1d { input: Var, kernel: Var, width: usize },
    MaxOverTime { input: Var, argmax: Vec<usize> },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Gather { table: Var, indices: Vec<usize> },
    SelectRow(Var, usize),
    PriorLogDensity(Var, PriorSpec),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records primitive operations for reverse-mode differentiation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Tape::gradients`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, zeros if disconnected.
    pub fn wrt(&self, var: Var, tape: &Tape) -> Tensor {
        self.grads[var.0].clone().unwrap_or_else(|| Tensor::zeros(tape.value(var).shape()))
    }
}

fn shape_err(op: &str, a: &Tensor, b: &Tensor) -> DalError {
    DalError::Shape(format!("{op}: {:?} vs {:?}", a.shape(), b.shape()))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Row-wise softmax of a matrix, outside any tape.
pub fn softmax_rows(t: &Tensor) -> Tensor {
    let c = t.cols();
    let mut out = vec![0.0; t.len()];
    for r in 0..t.rows() {
        softmax_row(t.row_slice(r), &mut out[r * c..(r + 1) * c]);
    }
    Tensor::new(t.shape().to_vec(), out).expect("same shape")
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

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// A differentiable leaf whose gradient can be read with [`Tape::gradients`]
    /// but is not tied to a parameter store.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, true)
    }

    /// Binds the current value of a stored parameter to the tape.
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> Result<Var> {
        let idx = store
            .index_of(name)
            .ok_or_else(|| DalError::invalid(format!("unknown parameter `{name}`")))?;
        let value = store.value_at(idx).clone();
        let trainable = store.is_trainable(idx);
        Ok(self.push(value, Op::Param(idx), trainable))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b)).map_err(|_| {
            shape_err("matmul", self.value(a), self.value(b))
        })?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    /// Adds a `[1, n]` (or `[n]`) bias to every row of an `[m, n]` matrix.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(bias));
        if bv.len() != av.cols() || bv.rows() != 1 {
            return Err(shape_err("add_bias", av, bv));
        }
        let n = av.cols();
        let mut data = av.data().to_vec();
        for row in data.chunks_mut(n) {
            for (x, b) in row.iter_mut().zip(bv.data()) {
                *x += b;
            }
        }
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let ng = self.ng(a) || self.ng(bias);
        Ok(self.push(out, Op::AddBias(a, bias), ng))
    }

    fn zip_with(&mut self, name: &str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(name, av, bv));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("add", a, b, |x, y| x + y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("sub", a, b, |x, y| x - y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("mul", a, b, |x, y| x * y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("div", a, b, |x, y| x / y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Div(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x * c);
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, c), ng)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x + c);
        let ng = self.ng(a);
        self.push(out, Op::AddScalar(a), ng)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let out = self.value(a).map(f);
        let ng = self.ng(a);
        self.push(out, op, ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, Op::Ln(a), f64::ln)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    /// Sum of all entries, as a `[1]` scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let ng = self.ng(a);
        self.push(out, Op::Sum(a), ng)
    }

    /// Column means of an `[m, n]` matrix, as `[1, n]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let (m, n) = (av.rows(), av.cols());
        if m == 0 {
            return Err(DalError::Shape("mean_rows on a matrix with no rows".into()));
        }
        let mut out = vec![0.0; n];
        for r in 0..m {
            for (o, x) in out.iter_mut().zip(av.row_slice(r)) {
                *o += x;
            }
        }
        out.iter_mut().for_each(|o| *o /= m as f64);
        let ng = self.ng(a);
        Ok(self.push(Tensor::row(out), Op::MeanRows(a), ng))
    }

    /// Mean over consecutive row segments: rows `[0, l0)`, `[l0, l0+l1)`, ...
    /// produce one output row each. This is `mean_rows` batched over examples.
    pub fn segment_mean(&mut self, a: Var, lengths: &[usize]) -> Result<Var> {
        let av = self.value(a);
        let n = av.cols();
        if lengths.iter().sum::<usize>() != av.rows() || lengths.contains(&0) {
            return Err(DalError::Shape(format!(
                "segment_mean: segment lengths {lengths:?} do not tile {:?}",
                av.shape()
            )));
        }
        let mut out = vec![0.0; lengths.len() * n];
        let mut start = 0;
        for (s, &len) in lengths.iter().enumerate() {
            let orow = &mut out[s * n..(s + 1) * n];
            for r in start..start + len {
                for (o, x) in orow.iter_mut().zip(av.row_slice(r)) {
                    *o += x;
                }
            }
            orow.iter_mut().for_each(|o| *o /= len as f64);
            start += len;
        }
        let ng = self.ng(a);
        let out = Tensor::matrix(lengths.len(), n, out)?;
        Ok(self.push(out, Op::SegmentMean(a, lengths.to_vec()), ng))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = softmax_rows(self.value(a));
        let ng = self.ng(a);
        self.push(out, Op::SoftmaxRows(a), ng)
    }

    /// Mean negative log-likelihood of `targets` under row-softmax of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let (b, c) = (lv.rows(), lv.cols());
        if targets.len() != b {
            return Err(DalError::Shape(format!(
                "cross_entropy: {} targets for logits {:?}",
                targets.len(),
                lv.shape()
            )));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= c) {
            return Err(DalError::invalid(format!("cross_entropy: target {t} out of range for {c} classes")));
        }
        if b == 0 {
            return Err(DalError::invalid("cross_entropy: empty batch"));
        }
        let mut probs = vec![0.0; b * c];
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = lv.row_slice(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[t];
            softmax_row(row, &mut probs[r * c..(r + 1) * c]);
        }
        let ng = self.ng(logits);
        Ok(self.push(
            Tensor::scalar(loss / b as f64),
            Op::CrossEntropy { logits, targets: targets.to_vec(), probs },
            ng,
        ))
    }

    /// Valid, stride-1 1-D convolution of an `[L, d]` sequence with a kernel
    /// stored as `[width * d, out]`. Output is `[L - width + 1, out]`.
    pub fn conv1d(&mut self, input: Var, kernel: Var, width: usize) -> Result<Var> {
        let (xv, kv) = (self.value(input), self.value(kernel));
        let (len, d) = (xv.rows(), xv.cols());
        if width == 0 || len < width || kv.rows() != width * d {
            return Err(DalError::Shape(format!(
                "conv1d: input {:?}, kernel {:?}, width {width}",
                xv.shape(),
                kv.shape()
            )));
        }
        let out_ch = kv.cols();
        let steps = len - width + 1;
        let mut out = vec![0.0; steps * out_ch];
        for t in 0..steps {
            let window = &xv.data()[t * d..(t + width) * d];
            matmul_into(window, kv.data(), &mut out[t * out_ch..(t + 1) * out_ch], 1, width * d, out_ch);
        }
        let ng = self.ng(input) || self.ng(kernel);
        let out = Tensor::matrix(steps, out_ch, out)?;
        Ok(self.push(out, Op::Conv1d { input, kernel, width }, ng))
    }

    /// Column-wise max over the rows of an `[L, c]` matrix, as `[1, c]`.
    pub fn max_over_time(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let (m, n) = (av.rows(), av.cols());
        if m == 0 {
            return Err(DalError::Shape("max_over_time on an empty sequence".into()));
        }
        let mut out = av.row_slice(0).to_vec();
        let mut argmax = vec![0; n];
        for r in 1..m {
            for (c, &x) in av.row_slice(r).iter().enumerate() {
                if x > out[c] {
                    out[c] = x;
                    argmax[c] = r;
                }
            }
        }
        let ng = self.ng(a);
        Ok(self.push(Tensor::row(out), Op::MaxOverTime { input: a, argmax }, ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| DalError::Shape("concat_cols of nothing".into()))?;
        let rows = self.value(*first).rows();
        for p in parts {
            if self.value(*p).rows() != rows {
                return Err(shape_err("concat_cols", self.value(*first), self.value(*p)));
            }
        }
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                out.extend_from_slice(self.value(*p).row_slice(r));
            }
        }
        let ng = parts.iter().any(|p| self.ng(*p));
        let out = Tensor::matrix(rows, total, out)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| DalError::Shape("concat_rows of nothing".into()))?;
        let cols = self.value(*first).cols();
        let mut out = Vec::new();
        let mut rows = 0;
        for p in parts {
            let pv = self.value(*p);
            if pv.cols() != cols {
                return Err(shape_err("concat_rows", self.value(*first), pv));
            }
            rows += pv.rows();
            out.extend_from_slice(pv.data());
        }
        let ng = parts.iter().any(|p| self.ng(*p));
        let out = Tensor::matrix(rows, cols, out)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), ng))
    }

    /// Row lookup (embedding gather): output row `i` is `table[indices[i]]`.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let d = tv.cols();
        if let Some(&bad) = indices.iter().find(|&&i| i >= tv.rows()) {
            return Err(DalError::Shape(format!("gather: index {bad} out of range for {:?}", tv.shape())));
        }
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            out.extend_from_slice(tv.row_slice(i));
        }
        let ng = self.ng(table);
        let out = Tensor::matrix(indices.len(), d, out)?;
        Ok(self.push(out, Op::Gather { table, indices: indices.to_vec() }, ng))
    }

    pub fn select_row(&mut self, a: Var, row: usize) -> Result<Var> {
        let av = self.value(a);
        if row >= av.rows() {
            return Err(DalError::Shape(format!("select_row: row {row} of {:?}", av.shape())));
        }
        let out = Tensor::row(av.row_slice(row).to_vec());
        let ng = self.ng(a);
        Ok(self.push(out, Op::SelectRow(a, row), ng))
    }

    /// Elementwise log prior density of weights.
    pub fn prior_log_density(&mut self, w: Var, prior: PriorSpec) -> Var {
        let out = self.value(w).map(|x| prior.log_density(x));
        let ng = self.ng(w);
        self.push(out, Op::PriorLogDensity(w, prior), ng)
    }

    /// Reverse sweep from a scalar `loss`; returns every node's gradient.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(DalError::invalid("backward on an empty tape"));
        }
        if self.value(loss).len() != 1 {
            return Err(DalError::Shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), 1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Back-propagates `loss` and accumulates into the store's gradients.
    pub fn backward(&self, loss: Var, store: &mut ParameterStore) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (idx, node) in self.nodes.iter().enumerate().take(loss.0 + 1) {
            if let (Op::Param(p), Some(g)) = (&node.op, &grads.grads[idx]) {
                store.accumulate_grad(*p, g);
            }
        }
        Ok(())
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(self.nodes[v.0].value.shape()));
            f(slot.data_mut());
        };
        let gd = g.data();
        match &node.op {
            Op::Constant | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                acc(*a, &mut |ga| matmul_nt_into(gd, bv.data(), ga, m, k, n));
                acc(*b, &mut |gb| matmul_tn_into(av.data(), gd, gb, m, k, n));
            }
            Op::AddBias(a, b) => {
                let n = val(*a).cols();
                acc(*a, &mut |ga| ga.iter_mut().zip(gd).for_each(|(x, y)| *x += y));
                acc(*b, &mut |gb| {
                    for row in gd.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| ga.iter_mut().zip(gd).for_each(|(x, y)| *x += y));
                acc(*b, &mut |gb| gb.iter_mut().zip(gd).for_each(|(x, y)| *x += y));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| ga.iter_mut().zip(gd).for_each(|(x, y)| *x += y));
                acc(*b, &mut |gb| gb.iter_mut().zip(gd).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a).data(), val(*b).data());
                acc(*a, &mut |ga| {
                    for i in 0..ga.len() {
                        ga[i] += gd[i] * bv[i];
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..gb.len() {
                        gb[i] += gd[i] * av[i];
                    }
                });
            }
            Op::Div(a, b) => {
                let (av, bv) = (val(*a).data(), val(*b).data());
                acc(*a, &mut |ga| {
                    for i in 0..ga.len() {
                        ga[i] += gd[i] / bv[i];
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..gb.len() {
                        gb[i] -= gd[i] * av[i] / (bv[i] * bv[i]);
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |ga| ga.iter_mut().zip(gd).for_each(|(x, y)| *x += c * y)),
            Op::AddScalar(a) => acc(*a, &mut |ga| ga.iter_mut().zip(gd).for_each(|(x, y)| *x += y)),
            Op::Tanh(a) => {
                let y = node.value.data();
                acc(*a, &mut |ga| {
                    for i in 0..ga.len() {
                        ga[i] += gd[i] * (1.0 - y[i] * y[i]);
                    }
                });
            }
            Op::Relu(a) => {
                let x = val(*a).data();
                acc(*a, &mut |ga| {
                    for i in 0..ga.len() {
                        if x[i] > 0.0 {
                            ga[i] += gd[i];
                        }
                    }
                });
            }
            Op::Softplus(a) => {
                let x = val(*a).data();
                acc(*a, &mut |ga| {
                    for i in 0..ga.len() {
                        ga[i] += gd[i] * sigmoid(x[i]);
                    }
                });
            }
            Op::Exp(a) => {
                let y = node.value.data();
                acc(*a, &mut |ga| {
                    for i in 0..ga.len() {
                        ga[i] += gd[i] * y[i];
                    }
                });
            }
            Op::Ln(a) => {
                let x = val(*a).data();
                acc(*a, &mut |ga| {
                    for i in 0..ga.len() {
                        ga[i] += gd[i] / x[i];
                    }
                });
            }
            Op::Square(a) => {
                let x = val(*a).data();
                acc(*a, &mut |ga| {
                    for i in 0..ga.len() {
                        ga[i] += 2.0 * x[i] * gd[i];
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |ga| ga.iter_mut().for_each(|x| *x += gd[0])),
            Op::MeanRows(a) => {
                let (m, n) = (val(*a).rows(), val(*a).cols());
                acc(*a, &mut |ga| {
                    for row in ga.chunks_mut(n) {
                        for (x, y) in row.iter_mut().zip(gd) {
                            *x += y / m as f64;
                        }
                    }
                });
            }
            Op::SegmentMean(a, lengths) => {
                let n = val(*a).cols();
                acc(*a, &mut |ga| {
                    let mut start = 0;
                    for (s, &len) in lengths.iter().enumerate() {
                        let grow = &gd[s * n..(s + 1) * n];
                        for r in start..start + len {
                            for (x, y) in ga[r * n..(r + 1) * n].iter_mut().zip(grow) {
                                *x += y / len as f64;
                            }
                        }
                        start += len;
                    }
                });
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let n = y.cols();
                acc(*a, &mut |ga| {
                    for r in 0..y.rows() {
                        let yr = y.row_slice(r);
                        let gr = &gd[r * n..(r + 1) * n];
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for c in 0..n {
                            ga[r * n + c] += yr[c] * (gr[c] - dot);
                        }
                    }
                });
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let c = val(*logits).cols();
                let scale = gd[0] / targets.len() as f64;
                acc(*logits, &mut |ga| {
                    for (r, &t) in targets.iter().enumerate() {
                        for k in 0..c {
                            let ind = if k == t { 1.0 } else { 0.0 };
                            ga[r * c + k] += scale * (probs[r * c + k] - ind);
                        }
                    }
                });
            }
            Op::Conv1d { input, kernel, width } => {
                let (xv, kv) = (val(*input), val(*kernel));
                let d = xv.cols();
                let out_ch = kv.cols();
                let steps = node.value.rows();
                let wd = width * d;
                acc(*input, &mut |gx| {
                    for t in 0..steps {
                        let grow = &gd[t * out_ch..(t + 1) * out_ch];
                        matmul_nt_into(grow, kv.data(), &mut gx[t * d..t * d + wd], 1, wd, out_ch);
                    }
                });
                acc(*kernel, &mut |gk| {
                    for t in 0..steps {
                        let window = &xv.data()[t * d..t * d + wd];
                        let grow = &gd[t * out_ch..(t + 1) * out_ch];
                        matmul_tn_into(window, grow, gk, 1, wd, out_ch);
                    }
                });
            }
            Op::MaxOverTime { input, argmax } => {
                let n = val(*input).cols();
                acc(*input, &mut |ga| {
                    for (c, &r) in argmax.iter().enumerate() {
                        ga[r * n + c] += gd[c];
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut offset = 0;
                for p in parts {
                    let w = val(*p).cols();
                    acc(*p, &mut |gp| {
                        for (r, row) in gp.chunks_mut(w).enumerate() {
                            let src = &gd[r * total + offset..r * total + offset + w];
                            row.iter_mut().zip(src).for_each(|(x, y)| *x += y);
                        }
                    });
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = val(*p).len();
                    acc(*p, &mut |gp| {
                        gp.iter_mut().zip(&gd[offset..offset + len]).for_each(|(x, y)| *x += y)
                    });
                    offset += len;
                }
            }
            Op::Gather { table, indices } => {
                let d = val(*table).cols();
                acc(*table, &mut |gt| {
                    for (r, &i) in indices.iter().enumerate() {
                        for (x, y) in gt[i * d..(i + 1) * d].iter_mut().zip(&gd[r * d..(r + 1) * d]) {
                            *x += y;
                        }
                    }
                });
            }
            Op::SelectRow(a, row) => {
                let n = val(*a).cols();
                acc(*a, &mut |ga| {
                    ga[row * n..(row + 1) * n].iter_mut().zip(gd).for_each(|(x, y)| *x += y)
                });
            }
            Op::PriorLogDensity(w, prior) => {
                let x = val(*w).data();
                acc(*w, &mut |gw| {
                    for i in 0..gw.len() {
                        gw[i] += gd[i] * prior.log_density_grad(x[i]);
                    }
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn relu_sign_boundaries() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::row(vec![-1.0, 0.0, 2.0]));
        let y = t.relu(x);
        assert_eq!(t.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::row(vec![0.0; 3]));
        let y = t.softmax_rows(x);
        for &p in t.value(y).data() {
            assert!(close(p, 1.0 / 3.0, 1e-15));
        }
    }

    #[test]
    fn cross_entropy_reference_values() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::row(vec![0.0, 0.0, 0.0]));
        let l = t.cross_entropy(x, &[2]).unwrap();
        assert!(close(t.scalar(l), 3f64.ln(), 1e-12));

        let x = t.constant(Tensor::row(vec![1000.0, 0.0]));
        let l = t.cross_entropy(x, &[0]).unwrap();
        assert!(t.scalar(l).abs() < 1e-12);

        let x = t.constant(Tensor::row(vec![1.0, 2.0]));
        let l = t.cross_entropy(x, &[0]).unwrap();
        let e = std::f64::consts::E;
        let expected = -(e / (e + e * e)).ln();
        assert!(close(t.scalar(l), expected, 1e-12));
        assert!(close(t.scalar(l), 1.3133, 1e-4));
    }

    #[test]
    fn cross_entropy_rejects_out_of_range_target() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::row(vec![0.0, 0.0]));
        assert!(t.cross_entropy(x, &[2]).is_err());
    }

    #[test]
    fn square_sum_gradient() {
        let mut t = Tape::new();
        let w = t.leaf(Tensor::row(vec![3.0]));
        let sq = t.square(w);
        let l = t.sum(sq);
        let g = t.gradients(l).unwrap();
        assert_eq!(g.wrt(w, &t).data(), &[6.0]);
    }

    #[test]
    fn disconnected_leaf_has_zero_gradient() {
        let mut t = Tape::new();
        let w = t.leaf(Tensor::row(vec![3.0]));
        let p = t.leaf(Tensor::row(vec![5.0]));
        let l = t.sum(w);
        let g = t.gradients(l).unwrap();
        assert_eq!(g.wrt(p, &t).data(), &[0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let w = t.leaf(Tensor::row(vec![1.0, 2.0]));
        assert!(t.gradients(w).is_err());
    }

    #[test]
    fn conv1d_matches_manual_window_products() {
        let mut t = Tape::new();
        // L = 3, d = 2, width = 2, one output channel.
        let x = t.constant(Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let k = t.constant(Tensor::matrix(4, 1, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let y = t.conv1d(x, k, 2).unwrap();
        // x[t,0] + x[t+1,1]
        assert_eq!(t.value(y).data(), &[1.0 + 4.0, 3.0 + 6.0]);
    }

    #[test]
    fn shape_mismatch_diagnostic_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[3, 2]));
        let msg = t.add(a, b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[3, 2]"), "{msg}");
    }
}
