//! Reverse-mode differentiation over a recorded sequence of 2-D operations.
//!
//! A [`Tape`] borrows a [`ParamSet`]; forward calls append nodes, and
//! [`Tape::backward`] walks them in reverse, returning gradients for every
//! parameter. Constant inputs never receive gradients.

use super::ops::{self, dot, matmul_into};
use super::{NnError, TensorBuffer};

/// Index of a parameter inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named trainable tensors, in registration order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<TensorBuffer>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: TensorBuffer) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &TensorBuffer {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut TensorBuffer {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &TensorBuffer)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            values: self.tensors.iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }
}

/// Per-parameter gradient buffers aligned with a [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    values: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.values[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.values.iter()
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.values.iter_mut().flatten() {
            *v *= factor;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().flatten().all(|v| v.is_finite())
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    LayerNorm {
        x: Var,
        gain: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gelu(Var),
    Softmax(Var),
    Gather(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Reshape(Var),
    Sum(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

struct Node {
    op: Op,
    // Empty for parameter nodes, which read through the borrowed set.
    value: Option<TensorBuffer>,
}

pub struct Tape<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &TensorBuffer {
        let node = &self.nodes[v.0];
        match (&node.op, &node.value) {
            (Op::Param(id), _) => self.params.get(*id),
            (_, Some(t)) => t,
            _ => unreachable!("non-parameter node without value"),
        }
    }

    fn push(&mut self, op: Op, value: TensorBuffer) -> Var {
        self.nodes.push(Node { op, value: Some(value) });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: TensorBuffer) -> Var {
        self.push(Op::Input, value)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let out = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), out))
    }

    /// `a * b^T`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let out = ops::matmul_transposed(self.value(a), self.value(b))?;
        Ok(self.push(Op::MatMulT(a, b), out))
    }

    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var, NnError> {
        let out = ops::add_bias(self.value(a), self.value(bias))?;
        Ok(self.push(Op::AddBias(a, bias), out))
    }

    /// `x W + b`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var, NnError> {
        let h = self.matmul(x, weight)?;
        self.add_bias(h, bias)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rows() != vb.rows() || va.cols() != vb.cols() {
            return Err(NnError::ShapeMismatch {
                op: "add",
                detail: format!("{}x{} + {}x{}", va.rows(), va.cols(), vb.rows(), vb.cols()),
            });
        }
        let values = va.values().iter().zip(vb.values()).map(|(x, y)| x + y).collect();
        let out = TensorBuffer::matrix(va.rows(), va.cols(), values)?;
        out.ensure_finite("add")?;
        Ok(self.push(Op::Add(a, b), out))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, NnError> {
        let va = self.value(a);
        let values = va.values().iter().map(|x| x * factor).collect();
        let out = TensorBuffer::matrix(va.rows(), va.cols(), values)?;
        out.ensure_finite("scale")?;
        Ok(self.push(Op::Scale(a, factor), out))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, NnError> {
        let (xhat, rstd) = ops::normalize_rows(self.value(x));
        let gv = self.value(gain);
        let n = self.value(x).cols();
        if gv.len() != n {
            return Err(NnError::ShapeMismatch {
                op: "layer_norm",
                detail: format!("width {n} with gain {}", gv.len()),
            });
        }
        let scaled: Vec<f64> = xhat
            .chunks(n)
            .flat_map(|row| row.iter().zip(gv.values()).map(|(h, g)| h * g))
            .collect();
        let out = TensorBuffer::matrix(xhat.len() / n, n, scaled)?;
        out.ensure_finite("layer_norm")?;
        let normed = self.push(Op::LayerNorm { x, gain, xhat, rstd }, out);
        self.add_bias(normed, bias)
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var, NnError> {
        let out = ops::gelu(self.value(a))?;
        Ok(self.push(Op::Gelu(a), out))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, NnError> {
        let out = ops::softmax_rows(self.value(a))?;
        Ok(self.push(Op::Softmax(a), out))
    }

    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var, NnError> {
        let out = ops::embedding_lookup(self.value(table), ids)?;
        Ok(self.push(Op::Gather(table, ids.to_vec()), out))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let cols = self.value(parts[0]).cols();
        let mut values = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(NnError::ShapeMismatch {
                    op: "concat_rows",
                    detail: format!("width {} vs {cols}", t.cols()),
                });
            }
            rows += t.rows();
            values.extend_from_slice(t.values());
        }
        let out = TensorBuffer::matrix(rows, cols, values)?;
        Ok(self.push(Op::ConcatRows(parts.to_vec()), out))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let rows = self.value(parts[0]).rows();
        let mut cols = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(NnError::ShapeMismatch {
                    op: "concat_cols",
                    detail: format!("{} rows vs {rows}", t.rows()),
                });
            }
            cols += t.cols();
        }
        let mut values = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                values.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = TensorBuffer::matrix(rows, cols, values)?;
        Ok(self.push(Op::ConcatCols(parts.to_vec()), out))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NnError> {
        let t = self.value(a);
        if len == 0 || start + len > t.rows() {
            return Err(NnError::ShapeMismatch {
                op: "slice_rows",
                detail: format!("rows {start}..{} of {}", start + len, t.rows()),
            });
        }
        let c = t.cols();
        let out = TensorBuffer::matrix(len, c, t.values()[start * c..(start + len) * c].to_vec())?;
        Ok(self.push(Op::SliceRows(a, start), out))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NnError> {
        let t = self.value(a);
        if len == 0 || start + len > t.cols() {
            return Err(NnError::ShapeMismatch {
                op: "slice_cols",
                detail: format!("cols {start}..{} of {}", start + len, t.cols()),
            });
        }
        let values = (0..t.rows())
            .flat_map(|r| t.row(r)[start..start + len].iter().copied())
            .collect();
        let out = TensorBuffer::matrix(t.rows(), len, values)?;
        Ok(self.push(Op::SliceCols(a, start), out))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var, NnError> {
        let out = self.value(a).clone().reshaped(vec![rows, cols])?;
        Ok(self.push(Op::Reshape(a), out))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, NnError> {
        let s = self.value(a).values().iter().sum();
        let out = TensorBuffer::matrix(1, 1, vec![s])?;
        out.ensure_finite("sum")?;
        Ok(self.push(Op::Sum(a), out))
    }

    /// Multi-head self/cross attention: `q`, `k`, `v` hold all heads side by side.
    pub fn multi_head_attention(&mut self, q: Var, k: Var, v: Var, n_heads: usize) -> Result<Var, NnError> {
        let width = self.value(q).cols();
        if n_heads == 0 || !width.is_multiple_of(n_heads) {
            return Err(NnError::ShapeMismatch {
                op: "multi_head_attention",
                detail: format!("width {width} over {n_heads} heads"),
            });
        }
        let dh = width / n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(n_heads);
        for h in 0..n_heads {
            let qh = self.slice_cols(q, h * dh, dh)?;
            let kh = self.slice_cols(k, h * dh, dh)?;
            let vh = self.slice_cols(v, h * dh, dh)?;
            let scores = self.matmul_t(qh, kh)?;
            let scores = self.scale(scores, scale)?;
            let weights = self.softmax_rows(scores)?;
            heads.push(self.matmul(weights, vh)?);
        }
        if heads.len() == 1 {
            Ok(heads[0])
        } else {
            self.concat_cols(&heads)
        }
    }

    /// Mean negative log-likelihood of `labels` under row-wise softmax.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, NnError> {
        let t = self.value(logits);
        let (b, k) = (t.rows(), t.cols());
        if labels.len() != b {
            return Err(NnError::ShapeMismatch {
                op: "cross_entropy",
                detail: format!("{b} rows vs {} labels", labels.len()),
            });
        }
        let mut probs = Vec::with_capacity(b * k);
        let mut loss = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            if label >= k {
                return Err(NnError::IndexOutOfRange { index: label, len: k });
            }
            let row = t.row(r);
            loss += ops::log_sum_exp(row) - row[label];
            probs.extend(ops::softmax(row));
        }
        let out = TensorBuffer::matrix(1, 1, vec![loss / b as f64])?;
        out.ensure_finite("cross_entropy")?;
        Ok(self.push(
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            out,
        ))
    }

    /// Gradients of the scalar `loss` with respect to every parameter.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NnError> {
        if loss.0 >= self.nodes.len() {
            return Err(NnError::BackwardBeforeForward);
        }
        if self.value(loss).len() != 1 {
            return Err(NnError::ShapeMismatch {
                op: "backward",
                detail: format!("loss has {} elements", self.value(loss).len()),
            });
        }
        let mut grads = self.params.zero_gradients();
        let mut adj: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Input => {}
                Op::Param(id) => {
                    for (a, b) in grads.values[id.0].iter_mut().zip(&g) {
                        *a += b;
                    }
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                    // dA = G B^T
                    let ga = acc(&mut adj, *a, m * k);
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for c in 0..k {
                            ga[r * k + c] += dot(grow, &vb.values()[c * n..(c + 1) * n]);
                        }
                    }
                    // dB = A^T G
                    let gb = acc(&mut adj, *b, k * n);
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let av = va.values()[r * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            for (o, gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += av * gv;
                            }
                        }
                    }
                }
                Op::MatMulT(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (va.rows(), va.cols(), vb.rows());
                    // C = A B^T: dA = G B, dB = G^T A
                    let ga = acc(&mut adj, *a, m * k);
                    matmul_into(&g, vb.values(), ga, m, n, k);
                    let gb = acc(&mut adj, *b, n * k);
                    for r in 0..m {
                        for j in 0..n {
                            let gv = g[r * n + j];
                            if gv == 0.0 {
                                continue;
                            }
                            for (o, av) in gb[j * k..(j + 1) * k].iter_mut().zip(va.row(r)) {
                                *o += gv * av;
                            }
                        }
                    }
                }
                Op::AddBias(a, bias) => {
                    let n = self.value(*bias).len();
                    let gb = acc(&mut adj, *bias, n);
                    for row in g.chunks(n) {
                        for (o, v) in gb.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    add_into(acc(&mut adj, *a, g.len()), &g);
                }
                Op::Add(a, b) => {
                    add_into(acc(&mut adj, *a, g.len()), &g);
                    add_into(acc(&mut adj, *b, g.len()), &g);
                }
                Op::Scale(a, f) => {
                    let ga = acc(&mut adj, *a, g.len());
                    for (o, v) in ga.iter_mut().zip(&g) {
                        *o += f * v;
                    }
                }
                Op::LayerNorm { x, gain, xhat, rstd } => {
                    let gamma = self.value(*gain).values().to_vec();
                    let n = gamma.len();
                    let gg = acc(&mut adj, *gain, n);
                    for (r, row) in g.chunks(n).enumerate() {
                        for c in 0..n {
                            gg[c] += row[c] * xhat[r * n + c];
                        }
                    }
                    let gx = acc(&mut adj, *x, g.len());
                    for (r, row) in g.chunks(n).enumerate() {
                        let h = &xhat[r * n..(r + 1) * n];
                        let dxhat: Vec<f64> = row.iter().zip(&gamma).map(|(a, b)| a * b).collect();
                        let mean_d = dxhat.iter().sum::<f64>() / n as f64;
                        let mean_dh = dot(&dxhat, h) / n as f64;
                        for c in 0..n {
                            gx[r * n + c] += rstd[r] * (dxhat[c] - mean_d - h[c] * mean_dh);
                        }
                    }
                }
                Op::Gelu(a) => {
                    let va = self.value(*a).values().to_vec();
                    let ga = acc(&mut adj, *a, g.len());
                    for ((o, gv), x) in ga.iter_mut().zip(&g).zip(&va) {
                        *o += gv * ops::gelu_derivative(*x);
                    }
                }
                Op::Softmax(a) => {
                    let y = self.nodes[i].value.as_ref().unwrap();
                    let n = y.cols();
                    let yv = y.values().to_vec();
                    let ga = acc(&mut adj, *a, g.len());
                    for (r, row) in g.chunks(n).enumerate() {
                        let yr = &yv[r * n..(r + 1) * n];
                        let s = dot(row, yr);
                        for c in 0..n {
                            ga[r * n + c] += yr[c] * (row[c] - s);
                        }
                    }
                }
                Op::Gather(table, ids) => {
                    let t = self.value(*table);
                    let d = t.cols();
                    let gt = acc(&mut adj, *table, t.len());
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut gt[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.value(p).len();
                        add_into(acc(&mut adj, p, len), &g[offset..offset + len]);
                        offset += len;
                    }
                }
                Op::ConcatCols(parts) => {
                    let total = self.value(*parts.first().unwrap()).rows();
                    let width: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
                    let mut start = 0;
                    for &p in parts {
                        let t = self.value(p);
                        let (rows, c) = (t.rows(), t.cols());
                        debug_assert_eq!(rows, total);
                        let gp = acc(&mut adj, p, rows * c);
                        for r in 0..rows {
                            add_into(
                                &mut gp[r * c..(r + 1) * c],
                                &g[r * width + start..r * width + start + c],
                            );
                        }
                        start += c;
                    }
                }
                Op::SliceRows(a, start) => {
                    let t = self.value(*a);
                    let c = t.cols();
                    let len = t.len();
                    let ga = acc(&mut adj, *a, len);
                    add_into(&mut ga[start * c..start * c + g.len()], &g);
                }
                Op::SliceCols(a, start) => {
                    let t = self.value(*a);
                    let (rows, c) = (t.rows(), t.cols());
                    let w = g.len() / rows;
                    let ga = acc(&mut adj, *a, rows * c);
                    for r in 0..rows {
                        add_into(&mut ga[r * c + start..r * c + start + w], &g[r * w..(r + 1) * w]);
                    }
                }
                Op::Reshape(a) => add_into(acc(&mut adj, *a, g.len()), &g),
                Op::Sum(a) => {
                    let len = self.value(*a).len();
                    for o in acc(&mut adj, *a, len) {
                        *o += g[0];
                    }
                }
                Op::CrossEntropy { logits, labels, probs } => {
                    let b = labels.len();
                    let k = probs.len() / b;
                    let scale = g[0] / b as f64;
                    let gl = acc(&mut adj, *logits, b * k);
                    for (r, &label) in labels.iter().enumerate() {
                        for c in 0..k {
                            let onehot = if c == label { 1.0 } else { 0.0 };
                            gl[r * k + c] += scale * (probs[r * k + c] - onehot);
                        }
                    }
                }
            }
        }
        if !grads.is_finite() {
            return Err(NnError::NonFiniteGradient);
        }
        Ok(grads)
    }
}

fn acc(adj: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    adj[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
