//! Reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Tape`] is built fresh for every forward pass. Each op computes its
//! value eagerly and, when any input requires a gradient, records the rule
//! needed to push gradients back to its inputs. [`Tape::backward`] walks the
//! records in reverse order and accumulates into the [`ParamStore`].
//!
//! Matrices are `[rows, cols]`; sequence ops take `[batch, len, dim]`.

use super::tensor::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Affine(Var, f64),
    MulConst(Var, Vec<f64>),
    AddConst(Var),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Gather(Var, Vec<Option<usize>>),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    ScaleRows(Var, Var),
    BatchedMatVec(Var, Var),
    WeightedSum(Var, Var),
    NormalizeRows(Var, Vec<f64>),
    Diag(Var),
    BceWithLogits(Var, Vec<f64>),
    Mse(Var, Vec<f64>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn axpy(dst: &mut [f64], a: f64, x: &[f64]) {
    for (d, v) in dst.iter_mut().zip(x) {
        *d += a * v;
    }
}

/// Four independent partial sums, combined in a fixed order.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[2]) + (acc[1] + acc[3]) + tail
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a constant (never differentiated).
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push("constant", value, Op::Leaf, &[])
    }

    /// Records the current value of a parameter. Each call yields a separate
    /// leaf; gradients from all of them accumulate into the same store slot.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        self.nodes.push(Node {
            value: p.value.clone(),
            op: Op::Param(id),
            requires_grad: p.requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Copies a value off the tape so no gradient flows through it.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip_with(&mut self, name: &'static str, a: Var, b: Var, op: Op, f: fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::from_parts(ta.shape().to_vec(), data);
        self.push(name, out, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// `x[i, j] + bias[j]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tx.shape().len() != 2 || tb.len() != tx.cols() {
            return Err(shape_err(
                "add_bias",
                format!("{:?} + {:?}", tx.shape(), tb.shape()),
            ));
        }
        let mut out = tx.clone();
        let cols = tx.cols();
        for r in out.data_mut().chunks_exact_mut(cols) {
            r.iter_mut().zip(tb.data()).for_each(|(a, b)| *a += b);
        }
        self.push("add_bias", out, Op::AddBias(x, bias), &[x, bias])
    }

    /// `[n, k] x [k, m] -> [n, m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(shape_err(
                "matmul",
                format!("{:?} x {:?}", ta.shape(), tb.shape()),
            ));
        }
        let (n, k, m) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let row = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let a_ip = ta.data()[i * k + p];
                if a_ip != 0.0 {
                    axpy(row, a_ip, &tb.data()[p * m..(p + 1) * m]);
                }
            }
        }
        let out = Tensor::from_parts(vec![n, m], out);
        self.push("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    /// `[n, k] x [m, k]^T -> [n, m]`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[1] {
            return Err(shape_err(
                "matmul_t",
                format!("{:?} x {:?}^T", ta.shape(), tb.shape()),
            ));
        }
        let (n, m) = (ta.shape()[0], tb.shape()[0]);
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            for j in 0..m {
                out.push(dot(ta.row(i), tb.row(j)));
            }
        }
        let out = Tensor::from_parts(vec![n, m], out);
        self.push("matmul_t", out, Op::MatMulT(a, b), &[a, b])
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        let tx = self.value(x);
        let data = tx.data().iter().map(|v| scale * v + shift).collect();
        let out = Tensor::from_parts(tx.shape().to_vec(), data);
        self.push("affine", out, Op::Affine(x, scale), &[x])
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        self.affine(x, s, 0.0)
    }

    /// Elementwise product with a constant of the same shape.
    pub fn mul_const(&mut self, x: Var, c: &Tensor) -> Result<Var> {
        let tx = self.value(x);
        if tx.shape() != c.shape() {
            return Err(shape_err(
                "mul_const",
                format!("{:?} vs {:?}", tx.shape(), c.shape()),
            ));
        }
        let data = tx.data().iter().zip(c.data()).map(|(a, b)| a * b).collect();
        let out = Tensor::from_parts(tx.shape().to_vec(), data);
        self.push("mul_const", out, Op::MulConst(x, c.data().to_vec()), &[x])
    }

    /// `x + c` with the gradient passing straight to `x`.
    pub fn add_const(&mut self, x: Var, c: &Tensor) -> Result<Var> {
        let tx = self.value(x);
        if tx.shape() != c.shape() {
            return Err(shape_err(
                "add_const",
                format!("{:?} vs {:?}", tx.shape(), c.shape()),
            ));
        }
        let data = tx.data().iter().zip(c.data()).map(|(a, b)| a + b).collect();
        let out = Tensor::from_parts(tx.shape().to_vec(), data);
        self.push("add_const", out, Op::AddConst(x), &[x])
    }

    fn map(&mut self, name: &'static str, x: Var, op: Op, f: fn(f64) -> f64) -> Result<Var> {
        let tx = self.value(x);
        let data = tx.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::from_parts(tx.shape().to_vec(), data);
        self.push(name, out, op, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.map("sigmoid", x, Op::Sigmoid(x), sigmoid)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.map("relu", x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.map("exp", x, Op::Exp(x), f64::exp)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.map("log", x, Op::Log(x), f64::ln)
    }

    fn check_matrix(&self, op: &'static str, x: Var) -> Result<(usize, usize)> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(shape_err(op, format!("expected a matrix, got {s:?}")));
        }
        Ok((s[0], s[1]))
    }

    /// Row-wise softmax. `mask`, when given, has one flag per element;
    /// `false` entries get probability exactly 0.
    pub fn softmax_rows(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let (n, m) = self.check_matrix("softmax_rows", x)?;
        if let Some(mask) = mask {
            if mask.len() != n * m {
                return Err(shape_err(
                    "softmax_rows",
                    format!("mask length {} for [{n}, {m}]", mask.len()),
                ));
            }
        }
        let tx = self.value(x);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let xr = tx.row(i);
            let keep = |j: usize| mask.is_none_or(|mk| mk[i * m + j]);
            let max = (0..m)
                .filter(|&j| keep(j))
                .map(|j| xr[j])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::Invalid(format!(
                    "softmax_rows: row {i} is fully masked"
                )));
            }
            let orow = &mut out[i * m..(i + 1) * m];
            let mut total = 0.0;
            for j in 0..m {
                if keep(j) {
                    let e = (xr[j] - max).exp();
                    orow[j] = e;
                    total += e;
                }
            }
            orow.iter_mut().for_each(|v| *v /= total);
        }
        let out = Tensor::from_parts(vec![n, m], out);
        self.push("softmax_rows", out, Op::SoftmaxRows(x), &[x])
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (n, m) = self.check_matrix("log_softmax_rows", x)?;
        let tx = self.value(x);
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            let xr = tx.row(i);
            let max = xr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + xr.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            out.extend(xr.iter().map(|v| v - lse));
        }
        let out = Tensor::from_parts(vec![n, m], out);
        self.push("log_softmax_rows", out, Op::LogSoftmaxRows(x), &[x])
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(shape_err("concat_cols", "no inputs".into()));
        }
        let n = self.value(parts[0]).rows();
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[0] != n {
                return Err(shape_err(
                    "concat_cols",
                    format!("part {s:?} does not have {n} rows"),
                ));
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::from_parts(vec![n, total], out);
        self.push("concat_cols", out, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, m) = self.check_matrix("slice_cols", x)?;
        if len == 0 || start + len > m {
            return Err(shape_err(
                "slice_cols",
                format!("[{start}, {}) of {m} columns", start + len),
            ));
        }
        let tx = self.value(x);
        let mut out = Vec::with_capacity(n * len);
        for i in 0..n {
            out.extend_from_slice(&tx.row(i)[start..start + len]);
        }
        let out = Tensor::from_parts(vec![n, len], out);
        self.push("slice_cols", out, Op::SliceCols(x, start), &[x])
    }

    /// Embedding lookup: row `idx[i]` of `table`, or a zero row for `None`.
    pub fn gather(&mut self, table: Var, idx: &[Option<usize>]) -> Result<Var> {
        let (v, d) = self.check_matrix("gather", table)?;
        if idx.is_empty() {
            return Err(shape_err("gather", "empty index list".into()));
        }
        let tt = self.value(table);
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            match i {
                Some(i) if i >= v => {
                    return Err(Error::IndexOutOfRange {
                        what: "gather",
                        index: i,
                        size: v,
                    })
                }
                Some(i) => out.extend_from_slice(tt.row(i)),
                None => out.extend(std::iter::repeat_n(0.0, d)),
            }
        }
        let out = Tensor::from_parts(vec![idx.len(), d], out);
        self.push("gather", out, Op::Gather(table, idx.to_vec()), &[table])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshaped(shape.to_vec())?;
        self.push("reshape", out, Op::Reshape(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push("mean", Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// `x[b, t] * w[b]` for `x: [B, T]`, `w: [B, 1]`.
    pub fn scale_rows(&mut self, x: Var, w: Var) -> Result<Var> {
        let (b, t) = self.check_matrix("scale_rows", x)?;
        if self.value(w).len() != b {
            return Err(shape_err(
                "scale_rows",
                format!("[{b}, {t}] by {:?}", self.shape(w)),
            ));
        }
        let (tx, tw) = (self.value(x), self.value(w));
        let mut out = tx.clone();
        for (r, &wi) in out.data_mut().chunks_exact_mut(t).zip(tw.data()) {
            r.iter_mut().for_each(|v| *v *= wi);
        }
        self.push("scale_rows", out, Op::ScaleRows(x, w), &[x, w])
    }

    fn check_seq(&self, op: &'static str, h: Var, b: usize) -> Result<(usize, usize)> {
        let s = self.shape(h);
        if s.len() != 3 || s[0] != b {
            return Err(shape_err(
                op,
                format!("sequence {s:?} incompatible with batch {b}"),
            ));
        }
        Ok((s[1], s[2]))
    }

    /// Per-position dot products: `h: [B, T, D]`, `q: [B, D]` -> `[B, T]`.
    pub fn batched_matvec(&mut self, h: Var, q: Var) -> Result<Var> {
        let (b, d) = self.check_matrix("batched_matvec", q)?;
        let (t, dh) = self.check_seq("batched_matvec", h, b)?;
        if dh != d {
            return Err(shape_err(
                "batched_matvec",
                format!("{:?} . {:?}", self.shape(h), self.shape(q)),
            ));
        }
        let (th, tq) = (self.value(h), self.value(q));
        let mut out = Vec::with_capacity(b * t);
        for bi in 0..b {
            let qr = tq.row(bi);
            for ti in 0..t {
                let off = (bi * t + ti) * d;
                out.push(dot(&th.data()[off..off + d], qr));
            }
        }
        let out = Tensor::from_parts(vec![b, t], out);
        self.push("batched_matvec", out, Op::BatchedMatVec(h, q), &[h, q])
    }

    /// Attention pooling: `s: [B, T]`, `h: [B, T, D]` -> `[B, D]`.
    pub fn weighted_sum(&mut self, s: Var, h: Var) -> Result<Var> {
        let (b, t) = self.check_matrix("weighted_sum", s)?;
        let (th_len, d) = self.check_seq("weighted_sum", h, b)?;
        if th_len != t {
            return Err(shape_err(
                "weighted_sum",
                format!("weights {:?} for sequence {:?}", self.shape(s), self.shape(h)),
            ));
        }
        let (ts, th) = (self.value(s), self.value(h));
        let mut out = vec![0.0; b * d];
        for bi in 0..b {
            let orow = &mut out[bi * d..(bi + 1) * d];
            for ti in 0..t {
                let off = (bi * t + ti) * d;
                axpy(orow, ts.data()[bi * t + ti], &th.data()[off..off + d]);
            }
        }
        let out = Tensor::from_parts(vec![b, d], out);
        self.push("weighted_sum", out, Op::WeightedSum(s, h), &[s, h])
    }

    /// L2-normalizes each row. A zero row is an error.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let (n, m) = self.check_matrix("normalize_rows", x)?;
        let tx = self.value(x);
        let mut norms = Vec::with_capacity(n);
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            let r = tx.row(i);
            let norm = dot(r, r).sqrt();
            if norm == 0.0 {
                return Err(Error::Invalid(format!(
                    "normalize_rows: row {i} has zero norm"
                )));
            }
            norms.push(norm);
            out.extend(r.iter().map(|v| v / norm));
        }
        let out = Tensor::from_parts(vec![n, m], out);
        self.push("normalize_rows", out, Op::NormalizeRows(x, norms), &[x])
    }

    /// Cosine similarity between every row of `a` and every row of `b`.
    pub fn cosine_matrix(&mut self, a: Var, b: Var) -> Result<Var> {
        let na = self.normalize_rows(a)?;
        let nb = self.normalize_rows(b)?;
        self.matmul_t(na, nb)
    }

    pub fn diag(&mut self, x: Var) -> Result<Var> {
        let (n, m) = self.check_matrix("diag", x)?;
        if n != m {
            return Err(shape_err("diag", format!("non-square [{n}, {m}]")));
        }
        let tx = self.value(x);
        let out = (0..n).map(|i| tx.data()[i * n + i]).collect();
        self.push("diag", Tensor::vector(out), Op::Diag(x), &[x])
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against `labels`,
    /// computed in the numerically stable logit form.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[f64]) -> Result<Var> {
        let tz = self.value(logits);
        if tz.len() != labels.len() {
            return Err(shape_err(
                "bce_with_logits",
                format!("{} logits vs {} labels", tz.len(), labels.len()),
            ));
        }
        let n = labels.len() as f64;
        let loss = tz
            .data()
            .iter()
            .zip(labels)
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum::<f64>()
            / n;
        let op = Op::BceWithLogits(logits, labels.to_vec());
        self.push("bce_with_logits", Tensor::scalar(loss), op, &[logits])
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, x: Var, target: &Tensor) -> Result<Var> {
        let tx = self.value(x);
        if tx.shape() != target.shape() {
            return Err(shape_err(
                "mse",
                format!("{:?} vs {:?}", tx.shape(), target.shape()),
            ));
        }
        let loss = tx
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / tx.len() as f64;
        let op = Op::Mse(x, target.data().to_vec());
        self.push("mse", Tensor::scalar(loss), op, &[x])
    }

    /// Accumulates d(loss)/d(param) into `store` for every parameter leaf
    /// reachable from `loss`. Repeated calls add to existing gradients.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        if !self.requires_grad(loss) {
            return Err(Error::Detached);
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads, store);
        }
        Ok(())
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>], store: &mut ParamStore) {
        let nodes = &self.nodes;
        let val = |v: Var| &nodes[v.0].value;
        // Lazily-zeroed accumulator for an input.
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
            f(slot);
        };
        let y = node.value.data();

        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => store.accumulate(*id, g),
            Op::Add(a, b) => {
                acc(*a, &mut |d| axpy(d, 1.0, g));
                acc(*b, &mut |d| axpy(d, 1.0, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |d| axpy(d, 1.0, g));
                acc(*b, &mut |d| axpy(d, -1.0, g));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a).data(), val(*b).data());
                acc(*a, &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * tb[k];
                    }
                });
                acc(*b, &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * ta[k];
                    }
                });
            }
            Op::AddBias(x, b) => {
                acc(*x, &mut |d| axpy(d, 1.0, g));
                let m = val(*b).len();
                acc(*b, &mut |d| {
                    for r in g.chunks_exact(m) {
                        axpy(d, 1.0, r);
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (n, k, m) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                acc(*a, &mut |d| {
                    for i in 0..n {
                        let gi = &g[i * m..(i + 1) * m];
                        for p in 0..k {
                            d[i * k + p] += dot(gi, &tb.data()[p * m..(p + 1) * m]);
                        }
                    }
                });
                acc(*b, &mut |d| {
                    for i in 0..n {
                        let gi = &g[i * m..(i + 1) * m];
                        for p in 0..k {
                            let a_ip = ta.data()[i * k + p];
                            if a_ip != 0.0 {
                                axpy(&mut d[p * m..(p + 1) * m], a_ip, gi);
                            }
                        }
                    }
                });
            }
            Op::MatMulT(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (n, k, m) = (ta.shape()[0], ta.shape()[1], tb.shape()[0]);
                acc(*a, &mut |d| {
                    for i in 0..n {
                        for j in 0..m {
                            let gij = g[i * m + j];
                            if gij != 0.0 {
                                axpy(&mut d[i * k..(i + 1) * k], gij, tb.row(j));
                            }
                        }
                    }
                });
                acc(*b, &mut |d| {
                    for i in 0..n {
                        for j in 0..m {
                            let gij = g[i * m + j];
                            if gij != 0.0 {
                                axpy(&mut d[j * k..(j + 1) * k], gij, ta.row(i));
                            }
                        }
                    }
                });
            }
            Op::Affine(x, s) => acc(*x, &mut |d| axpy(d, *s, g)),
            Op::MulConst(x, c) => acc(*x, &mut |d| {
                for k in 0..d.len() {
                    d[k] += g[k] * c[k];
                }
            }),
            Op::AddConst(x) => acc(*x, &mut |d| axpy(d, 1.0, g)),
            Op::Sigmoid(x) => acc(*x, &mut |d| {
                for k in 0..d.len() {
                    d[k] += g[k] * y[k] * (1.0 - y[k]);
                }
            }),
            Op::Relu(x) => acc(*x, &mut |d| {
                for k in 0..d.len() {
                    if y[k] > 0.0 {
                        d[k] += g[k];
                    }
                }
            }),
            Op::Exp(x) => acc(*x, &mut |d| {
                for k in 0..d.len() {
                    d[k] += g[k] * y[k];
                }
            }),
            Op::Log(x) => {
                let tx = val(*x).data();
                acc(*x, &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] / tx[k];
                    }
                });
            }
            Op::SoftmaxRows(x) => {
                let m = node.value.cols();
                acc(*x, &mut |d| {
                    for ((dr, gr), yr) in d.chunks_exact_mut(m).zip(g.chunks_exact(m)).zip(y.chunks_exact(m)) {
                        let s = dot(gr, yr);
                        for j in 0..m {
                            dr[j] += yr[j] * (gr[j] - s);
                        }
                    }
                });
            }
            Op::LogSoftmaxRows(x) => {
                let m = node.value.cols();
                acc(*x, &mut |d| {
                    for ((dr, gr), yr) in d.chunks_exact_mut(m).zip(g.chunks_exact(m)).zip(y.chunks_exact(m)) {
                        let s: f64 = gr.iter().sum();
                        for j in 0..m {
                            dr[j] += gr[j] - yr[j].exp() * s;
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let n = node.value.rows();
                let total = node.value.cols();
                let mut off = 0;
                for &p in parts {
                    let w = val(p).cols();
                    acc(p, &mut |d| {
                        for i in 0..n {
                            let src = &g[i * total + off..i * total + off + w];
                            axpy(&mut d[i * w..(i + 1) * w], 1.0, src);
                        }
                    });
                    off += w;
                }
            }
            Op::SliceCols(x, start) => {
                let m = val(*x).cols();
                let w = node.value.cols();
                acc(*x, &mut |d| {
                    for (i, gr) in g.chunks_exact(w).enumerate() {
                        axpy(&mut d[i * m + start..i * m + start + w], 1.0, gr);
                    }
                });
            }
            Op::Gather(table, idx) => {
                let dcols = val(*table).cols();
                acc(*table, &mut |d| {
                    for (gr, i) in g.chunks_exact(dcols).zip(idx) {
                        if let Some(i) = *i {
                            axpy(&mut d[i * dcols..(i + 1) * dcols], 1.0, gr);
                        }
                    }
                });
            }
            Op::Reshape(x) => acc(*x, &mut |d| axpy(d, 1.0, g)),
            Op::Sum(x) => acc(*x, &mut |d| d.iter_mut().for_each(|v| *v += g[0])),
            Op::Mean(x) => {
                let n = val(*x).len() as f64;
                acc(*x, &mut |d| d.iter_mut().for_each(|v| *v += g[0] / n));
            }
            Op::ScaleRows(x, w) => {
                let (tx, tw) = (val(*x), val(*w));
                let t = tx.cols();
                acc(*x, &mut |d| {
                    for (b, (dr, gr)) in d.chunks_exact_mut(t).zip(g.chunks_exact(t)).enumerate() {
                        axpy(dr, tw.data()[b], gr);
                    }
                });
                acc(*w, &mut |d| {
                    for (b, gr) in g.chunks_exact(t).enumerate() {
                        d[b] += dot(gr, tx.row(b));
                    }
                });
            }
            Op::BatchedMatVec(h, q) => {
                let (th, tq) = (val(*h), val(*q));
                let (b, t, dd) = (th.shape()[0], th.shape()[1], th.shape()[2]);
                acc(*h, &mut |d| {
                    for bi in 0..b {
                        for ti in 0..t {
                            let off = (bi * t + ti) * dd;
                            axpy(&mut d[off..off + dd], g[bi * t + ti], tq.row(bi));
                        }
                    }
                });
                acc(*q, &mut |d| {
                    for bi in 0..b {
                        for ti in 0..t {
                            let off = (bi * t + ti) * dd;
                            axpy(&mut d[bi * dd..(bi + 1) * dd], g[bi * t + ti], &th.data()[off..off + dd]);
                        }
                    }
                });
            }
            Op::WeightedSum(s, h) => {
                let (ts, th) = (val(*s), val(*h));
                let (b, t, dd) = (th.shape()[0], th.shape()[1], th.shape()[2]);
                acc(*s, &mut |d| {
                    for bi in 0..b {
                        let gr = &g[bi * dd..(bi + 1) * dd];
                        for ti in 0..t {
                            let off = (bi * t + ti) * dd;
                            d[bi * t + ti] += dot(gr, &th.data()[off..off + dd]);
                        }
                    }
                });
                acc(*h, &mut |d| {
                    for bi in 0..b {
                        let gr = &g[bi * dd..(bi + 1) * dd];
                        for ti in 0..t {
                            let off = (bi * t + ti) * dd;
                            axpy(&mut d[off..off + dd], ts.data()[bi * t + ti], gr);
                        }
                    }
                });
            }
            Op::NormalizeRows(x, norms) => {
                let m = node.value.cols();
                acc(*x, &mut |d| {
                    for (i, norm) in norms.iter().enumerate() {
                        let yr = &y[i * m..(i + 1) * m];
                        let gr = &g[i * m..(i + 1) * m];
                        let s = dot(yr, gr);
                        for j in 0..m {
                            d[i * m + j] += (gr[j] - yr[j] * s) / norm;
                        }
                    }
                });
            }
            Op::Diag(x) => {
                let n = g.len();
                acc(*x, &mut |d| {
                    for i in 0..n {
                        d[i * n + i] += g[i];
                    }
                });
            }
            Op::BceWithLogits(z, labels) => {
                let tz = val(*z).data();
                let n = labels.len() as f64;
                acc(*z, &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g[0] * (sigmoid(tz[k]) - labels[k]) / n;
                    }
                });
            }
            Op::Mse(x, target) => {
                let tx = val(*x).data();
                let n = target.len() as f64;
                acc(*x, &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g[0] * 2.0 * (tx[k] - target[k]) / n;
                    }
                });
            }
        }
    }
}
