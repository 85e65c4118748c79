//! Tape-based reverse-mode differentiation over 2-D tensors.
//!
//! Every forward primitive evaluates eagerly, appends a node to the tape and
//! remembers what its backward rule needs. [`Graph::backward`] walks the tape
//! in reverse, accumulates parameter gradients into the [`ParamStore`], and
//! clears the tape.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::params::{ParamId, ParamStore};
use crate::nn::tensor::{Scalar, Tensor};
use crate::vocab::PAD;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<F> {
    Constant,
    Param(ParamId),
    MatMul { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Affine(Var, F),
    Relu(Var),
    Sigmoid(Var),
    Log(Var),
    Softmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<F>, inv_std: Vec<F> },
    Embedding { table: Var, ids: Vec<usize> },
    Dropout { x: Var, mask: Vec<F> },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    RelGather { s: Var, labels: Vec<usize> },
    RelScatter { w: Var, labels: Vec<usize> },
    Sum(Var),
    CrossEntropy { logits: Var, probs: Vec<F>, targets: Vec<usize>, smoothing: F, count: usize },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

pub struct Graph<F: Scalar> {
    nodes: Vec<Node<F>>,
    param_vars: HashMap<ParamId, Var>,
    check_finite: bool,
    taped: bool,
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn dims2<F: Scalar>(t: &Tensor<F>) -> (usize, usize) {
    (t.rows(), t.cols())
}

impl<F: Scalar> Graph<F> {
    /// A fresh tape. Non-finite checks are on in debug builds.
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            check_finite: cfg!(debug_assertions),
            taped: false,
        }
    }

    pub fn with_finite_checks(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, name: &'static str, value: Tensor<F>, op: Op<F>, inputs: &[Var]) -> Result<Var> {
        if self.check_finite && !value.all_finite() {
            return Err(Error::NonFinite(name));
        }
        let requires_grad = match op {
            Op::Constant => false,
            Op::Param(_) => true,
            _ => inputs.iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.taped = true;
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.push("constant", t, Op::Constant, &[])
            .expect("constants are not finite-checked against ops")
    }

    /// Places a parameter on the tape (once per tape).
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let value = store.get(id).value.clone();
        self.nodes.push(Node {
            value,
            op: Op::Param(id),
            requires_grad: true,
        });
        self.taped = true;
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    /// `a · b` for `a: [m,k]`, `b: [k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2(self.value(a));
        let (k2, n) = dims2(self.value(b));
        if k != k2 || self.shape(a).len() != 2 || self.shape(b).len() != 2 {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![F::zero(); m * n];
        F::gemm(m, k, n, self.value(a).data(), (k as isize, 1), self.value(b).data(), (n as isize, 1), &mut out, false);
        let t = Tensor::new(vec![m, n], out)?;
        self.push("matmul", t, Op::MatMul { a, b, trans_b: false }, &[a, b])
    }

    /// `a · bᵀ` for `a: [m,k]`, `b: [n,k]`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2(self.value(a));
        let (n, k2) = dims2(self.value(b));
        if k != k2 || self.shape(a).len() != 2 || self.shape(b).len() != 2 {
            return Err(Error::shape("matmul_t", self.shape(a), self.shape(b)));
        }
        let mut out = vec![F::zero(); m * n];
        F::gemm(m, k, n, self.value(a).data(), (k as isize, 1), self.value(b).data(), (1, k as isize), &mut out, false);
        let t = Tensor::new(vec![m, n], out)?;
        self.push("matmul_t", t, Op::MatMul { a, b, trans_b: true }, &[a, b])
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let mut t = self.value(a).clone();
        t.add_assign(self.value(b));
        self.push("add", t, Op::Add(a, b), &[a, b])
    }

    /// Adds the vector `bias: [n]` to every row of `a: [m,n]`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let n = self.value(a).cols();
        if self.value(bias).len() != n {
            return Err(Error::shape("add_row", self.shape(a), self.shape(bias)));
        }
        let mut t = self.value(a).clone();
        let b = self.value(bias).data();
        for row in t.data_mut().chunks_mut(n) {
            for (x, &y) in row.iter_mut().zip(b) {
                *x += y;
            }
        }
        self.push("add_row", t, Op::AddRow(a, bias), &[a, bias])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push("mul", t, Op::Mul(a, b), &[a, b])
    }

    /// Scales row `i` of `a: [m,n]` by `c[i]` for `c: [m,1]`.
    pub fn mul_col(&mut self, a: Var, c: Var) -> Result<Var> {
        let (m, n) = dims2(self.value(a));
        if self.value(c).len() != m {
            return Err(Error::shape("mul_col", self.shape(a), self.shape(c)));
        }
        let mut t = self.value(a).clone();
        let cs = self.value(c).data();
        for (row, &s) in t.data_mut().chunks_mut(n).zip(cs) {
            row.iter_mut().for_each(|x| *x *= s);
        }
        self.push("mul_col", t, Op::MulCol(a, c), &[a, c])
    }

    /// `scale · x + offset`, elementwise.
    pub fn affine(&mut self, x: Var, scale: F, offset: F) -> Result<Var> {
        let t = self.value(x).map(|v| scale * v + offset);
        self.push("affine", t, Op::Affine(x, scale), &[x])
    }

    pub fn scale(&mut self, x: Var, s: F) -> Result<Var> {
        self.affine(x, s, F::zero())
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).map(|v| v.max(F::zero()));
        self.push("relu", t, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).map(|v| F::one() / (F::one() + (-v).exp()));
        self.push("sigmoid", t, Op::Sigmoid(x), &[x])
    }

    /// Natural log, clamped below at the smallest positive normal.
    pub fn log(&mut self, x: Var) -> Result<Var> {
        let tiny = F::min_positive_value();
        let t = self.value(x).map(|v| v.max(tiny).ln());
        self.push("log", t, Op::Log(x), &[x])
    }

    /// Row-wise softmax. Where `mask[i*cols + j]` is false the output is 0.
    pub fn softmax(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let (m, n) = dims2(self.value(x));
        if let Some(mask) = mask {
            if mask.len() != m * n {
                return Err(Error::shape("softmax mask", self.shape(x), &[mask.len()]));
            }
        }
        let mut out = self.value(x).data().to_vec();
        for (i, row) in out.chunks_mut(n).enumerate() {
            let keep = |j: usize| mask.map_or(true, |mk| mk[i * n + j]);
            let max = (0..n)
                .filter(|&j| keep(j))
                .map(|j| row[j])
                .fold(F::neg_infinity(), F::max);
            if max == F::neg_infinity() {
                return Err(Error::NoAttendableKey(i));
            }
            let mut sum = F::zero();
            for (j, v) in row.iter_mut().enumerate() {
                *v = if keep(j) { (*v - max).exp() } else { F::zero() };
                sum += *v;
            }
            row.iter_mut().for_each(|v| *v /= sum);
        }
        let t = Tensor::new(vec![m, n], out)?;
        self.push("softmax", t, Op::Softmax(x), &[x])
    }

    /// Row-wise layer normalization followed by `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: F) -> Result<Var> {
        let (m, n) = dims2(self.value(x));
        if self.value(gain).len() != n || self.value(bias).len() != n {
            return Err(Error::shape("layer_norm", self.shape(x), self.shape(gain)));
        }
        let nf = F::from_usize(n).expect("usize");
        let mut xhat = vec![F::zero(); m * n];
        let mut inv_std = vec![F::zero(); m];
        let mut out = vec![F::zero(); m * n];
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        for i in 0..m {
            let row = self.value(x).row(i);
            let mean = row.iter().copied().sum::<F>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / nf;
            let inv = F::one() / (var + eps).sqrt();
            inv_std[i] = inv;
            for j in 0..n {
                let h = (row[j] - mean) * inv;
                xhat[i * n + j] = h;
                out[i * n + j] = h * g[j] + b[j];
            }
        }
        let t = Tensor::new(vec![m, n], out)?;
        self.push("layer_norm", t, Op::LayerNorm { x, gain, bias, xhat, inv_std }, &[x, gain, bias])
    }

    /// Gathers rows of `table: [V,d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = dims2(self.value(table));
        if ids.is_empty() {
            return Err(Error::shape("embedding", self.shape(table), &[0]));
        }
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::BadTokenId { id, size: v });
            }
            out.extend_from_slice(self.value(table).row(id));
        }
        let t = Tensor::new(vec![ids.len(), d], out)?;
        self.push("embedding", t, Op::Embedding { table, ids: ids.to_vec() }, &[table])
    }

    /// Inverted dropout; the identity when `rng` is `None` or `rate` is 0.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: Option<&mut R>) -> Result<Var> {
        let Some(rng) = rng else { return Ok(x) };
        if rate <= 0.0 {
            return Ok(x);
        }
        let keep = F::from_f64_lossy(1.0 / (1.0 - rate));
        let mask: Vec<F> = (0..self.value(x).len())
            .map(|_| if rng.gen::<f64>() < rate { F::zero() } else { keep })
            .collect();
        let data = self.value(x).data().iter().zip(&mask).map(|(&v, &k)| v * k).collect();
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        self.push("dropout", t, Op::Dropout { x, mask }, &[x])
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = dims2(self.value(x));
        if start + len > n || len == 0 {
            return Err(Error::shape("slice_cols", self.shape(x), &[start, len]));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&src[i * n + start..i * n + start + len]);
        }
        let t = Tensor::new(vec![m, len], out)?;
        self.push("slice_cols", t, Op::SliceCols { x, start }, &[x])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let m = self.value(parts[0]).rows();
        for &p in parts {
            if self.value(p).rows() != m {
                return Err(Error::shape("concat_cols", self.shape(parts[0]), self.shape(p)));
            }
        }
        let n: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let t = Tensor::new(vec![m, n], out)?;
        self.push("concat_cols", t, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let n = self.value(parts[0]).cols();
        let mut out = Vec::new();
        for &p in parts {
            if self.value(p).cols() != n {
                return Err(Error::shape("concat_rows", self.shape(parts[0]), self.shape(p)));
            }
            out.extend_from_slice(self.value(p).data());
        }
        let m = out.len() / n;
        let t = Tensor::new(vec![m, n], out)?;
        self.push("concat_rows", t, Op::ConcatRows(parts.to_vec()), parts)
    }

    /// `out[i][j] = s[i][labels[i*nk + j]]` for `s: [nq, R]`.
    pub fn rel_gather(&mut self, s: Var, labels: &[usize], nk: usize) -> Result<Var> {
        let (nq, r) = dims2(self.value(s));
        if labels.len() != nq * nk || labels.iter().any(|&l| l >= r) {
            return Err(Error::shape("rel_gather", self.shape(s), &[labels.len()]));
        }
        let src = self.value(s).data();
        let out = labels
            .iter()
            .enumerate()
            .map(|(idx, &l)| src[(idx / nk) * r + l])
            .collect();
        let t = Tensor::new(vec![nq, nk], out)?;
        self.push("rel_gather", t, Op::RelGather { s, labels: labels.to_vec() }, &[s])
    }

    /// `out[i][l] = Σ_{j: labels[i*nk+j] = l} w[i][j]`, producing `[nq, buckets]`.
    pub fn rel_scatter(&mut self, w: Var, labels: &[usize], buckets: usize) -> Result<Var> {
        let (nq, nk) = dims2(self.value(w));
        if labels.len() != nq * nk || labels.iter().any(|&l| l >= buckets) {
            return Err(Error::shape("rel_scatter", self.shape(w), &[labels.len()]));
        }
        let mut out = vec![F::zero(); nq * buckets];
        for (idx, (&l, &x)) in labels.iter().zip(self.value(w).data()).enumerate() {
            out[(idx / nk) * buckets + l] += x;
        }
        let t = Tensor::new(vec![nq, buckets], out)?;
        self.push("rel_scatter", t, Op::RelScatter { w, labels: labels.to_vec() }, &[w])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().copied().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Mean label-smoothed negative log-likelihood over rows whose target is
    /// not [`PAD`]. The smoothed target puts `1 - smoothing` on the gold id
    /// and spreads `smoothing` uniformly over the vocabulary.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], smoothing: F) -> Result<Var> {
        let (m, v) = dims2(self.value(logits));
        if targets.len() != m {
            return Err(Error::shape("cross_entropy", self.shape(logits), &[targets.len()]));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(Error::BadTokenId { id: bad, size: v });
        }
        let count = targets.iter().filter(|&&t| t != PAD).count();
        if count == 0 {
            return Err(Error::EmptyBatch);
        }
        let uniform = smoothing / F::from_usize(v).expect("usize");
        let mut probs = vec![F::zero(); m * v];
        let mut total = F::zero();
        for (i, &t) in targets.iter().enumerate() {
            let row = self.value(logits).row(i);
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let lse = row.iter().map(|&z| (z - max).exp()).sum::<F>().ln() + max;
            for j in 0..v {
                probs[i * v + j] = (row[j] - lse).exp();
            }
            if t == PAD {
                continue;
            }
            let mut nll = (F::one() - smoothing) * (lse - row[t]);
            if smoothing > F::zero() {
                nll += uniform * row.iter().map(|&z| lse - z).sum::<F>();
            }
            total += nll;
        }
        let loss = total / F::from_usize(count).expect("usize");
        self.push(
            "cross_entropy",
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                probs,
                targets: targets.to_vec(),
                smoothing,
                count,
            },
            &[logits],
        )
    }

    /// Reverse pass from a scalar `loss`. Gradients are added to the
    /// parameters' `grad` tensors and the tape is cleared.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore<F>) -> Result<()> {
        if !self.taped || loss.0 >= self.nodes.len() {
            return Err(Error::NoTape);
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::shape("backward", self.shape(loss), &[1]));
        }
        let nodes = std::mem::take(&mut self.nodes);
        self.param_vars.clear();
        self.taped = false;

        let mut grads: Vec<Option<Tensor<F>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(nodes[loss.0].value.shape(), F::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            backward_node(&nodes, i, &g, &mut grads, store);
        }
        Ok(())
    }
}

fn slot<'a, F: Scalar>(
    grads: &'a mut [Option<Tensor<F>>],
    nodes: &[Node<F>],
    v: Var,
) -> Option<&'a mut Tensor<F>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(nodes[v.0].value.shape())))
}

fn backward_node<F: Scalar>(
    nodes: &[Node<F>],
    i: usize,
    g: &Tensor<F>,
    grads: &mut [Option<Tensor<F>>],
    store: &mut ParamStore<F>,
) {
    let node = &nodes[i];
    let gd = g.data();
    let val = |v: Var| &nodes[v.0].value;
    match &node.op {
        Op::Constant => {}
        Op::Param(id) => store.get_mut(*id).grad.add_assign(g),
        Op::MatMul { a, b, trans_b } => {
            let (m, k) = dims2(val(*a));
            let n = node.value.cols();
            let (ad, bd) = (val(*a).data(), val(*b).data());
            if let Some(da) = slot(grads, nodes, *a) {
                if *trans_b {
                    F::gemm(m, n, k, gd, (n as isize, 1), bd, (k as isize, 1), da.data_mut(), true);
                } else {
                    F::gemm(m, n, k, gd, (n as isize, 1), bd, (1, n as isize), da.data_mut(), true);
                }
            }
            if let Some(db) = slot(grads, nodes, *b) {
                if *trans_b {
                    F::gemm(n, m, k, gd, (1, n as isize), ad, (k as isize, 1), db.data_mut(), true);
                } else {
                    F::gemm(k, m, n, ad, (1, k as isize), gd, (n as isize, 1), db.data_mut(), true);
                }
            }
        }
        Op::Add(a, b) => {
            for v in [a, b] {
                if let Some(d) = slot(grads, nodes, *v) {
                    d.add_assign(g);
                }
            }
        }
        Op::AddRow(a, bias) => {
            if let Some(d) = slot(grads, nodes, *a) {
                d.add_assign(g);
            }
            if let Some(d) = slot(grads, nodes, *bias) {
                let n = d.len();
                for row in gd.chunks(n) {
                    for (x, &y) in d.data_mut().iter_mut().zip(row) {
                        *x += y;
                    }
                }
            }
        }
        Op::Mul(a, b) => {
            let (ad, bd) = (val(*a).data(), val(*b).data());
            if let Some(d) = slot(grads, nodes, *a) {
                for ((x, &gy), &o) in d.data_mut().iter_mut().zip(gd).zip(bd) {
                    *x += gy * o;
                }
            }
            if let Some(d) = slot(grads, nodes, *b) {
                for ((x, &gy), &o) in d.data_mut().iter_mut().zip(gd).zip(ad) {
                    *x += gy * o;
                }
            }
        }
        Op::MulCol(a, c) => {
            let n = node.value.cols();
            let (ad, cd) = (val(*a).data(), val(*c).data());
            if let Some(d) = slot(grads, nodes, *a) {
                for ((drow, grow), &s) in d.data_mut().chunks_mut(n).zip(gd.chunks(n)).zip(cd) {
                    for (x, &gy) in drow.iter_mut().zip(grow) {
                        *x += gy * s;
                    }
                }
            }
            if let Some(d) = slot(grads, nodes, *c) {
                for (i, x) in d.data_mut().iter_mut().enumerate() {
                    *x += (0..n).map(|j| gd[i * n + j] * ad[i * n + j]).sum::<F>();
                }
            }
        }
        Op::Affine(x, s) => {
            if let Some(d) = slot(grads, nodes, *x) {
                for (v, &gy) in d.data_mut().iter_mut().zip(gd) {
                    *v += *s * gy;
                }
            }
        }
        Op::Relu(x) => {
            let xd = val(*x).data();
            if let Some(d) = slot(grads, nodes, *x) {
                for ((v, &gy), &xi) in d.data_mut().iter_mut().zip(gd).zip(xd) {
                    if xi > F::zero() {
                        *v += gy;
                    }
                }
            }
        }
        Op::Sigmoid(x) => {
            let yd = node.value.data();
            if let Some(d) = slot(grads, nodes, *x) {
                for ((v, &gy), &y) in d.data_mut().iter_mut().zip(gd).zip(yd) {
                    *v += gy * y * (F::one() - y);
                }
            }
        }
        Op::Log(x) => {
            let xd = val(*x).data();
            let tiny = F::min_positive_value();
            if let Some(d) = slot(grads, nodes, *x) {
                for ((v, &gy), &xi) in d.data_mut().iter_mut().zip(gd).zip(xd) {
                    if xi > tiny {
                        *v += gy / xi;
                    }
                }
            }
        }
        Op::Softmax(x) => {
            let n = node.value.cols();
            let yd = node.value.data();
            if let Some(d) = slot(grads, nodes, *x) {
                for ((drow, grow), yrow) in d.data_mut().chunks_mut(n).zip(gd.chunks(n)).zip(yd.chunks(n)) {
                    let dot: F = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                    for ((v, &gy), &y) in drow.iter_mut().zip(grow).zip(yrow) {
                        *v += y * (gy - dot);
                    }
                }
            }
        }
        Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
            let n = node.value.cols();
            let nf = F::from_usize(n).expect("usize");
            let gn = val(*gain).data();
            if let Some(d) = slot(grads, nodes, *gain) {
                for (grow, hrow) in gd.chunks(n).zip(xhat.chunks(n)) {
                    for ((v, &gy), &h) in d.data_mut().iter_mut().zip(grow).zip(hrow) {
                        *v += gy * h;
                    }
                }
            }
            if let Some(d) = slot(grads, nodes, *bias) {
                for grow in gd.chunks(n) {
                    for (v, &gy) in d.data_mut().iter_mut().zip(grow) {
                        *v += gy;
                    }
                }
            }
            if let Some(d) = slot(grads, nodes, *x) {
                for (r, ((drow, grow), hrow)) in d
                    .data_mut()
                    .chunks_mut(n)
                    .zip(gd.chunks(n))
                    .zip(xhat.chunks(n))
                    .enumerate()
                {
                    let dh: Vec<F> = grow.iter().zip(gn).map(|(&a, &b)| a * b).collect();
                    let mean_dh = dh.iter().copied().sum::<F>() / nf;
                    let mean_dh_h = dh.iter().zip(hrow).map(|(&a, &b)| a * b).sum::<F>() / nf;
                    for j in 0..n {
                        drow[j] += inv_std[r] * (dh[j] - mean_dh - hrow[j] * mean_dh_h);
                    }
                }
            }
        }
        Op::Embedding { table, ids } => {
            if let Some(d) = slot(grads, nodes, *table) {
                let c = d.cols();
                for (row, &id) in gd.chunks(c).zip(ids) {
                    for (v, &gy) in d.data_mut()[id * c..(id + 1) * c].iter_mut().zip(row) {
                        *v += gy;
                    }
                }
            }
        }
        Op::Dropout { x, mask } => {
            if let Some(d) = slot(grads, nodes, *x) {
                for ((v, &gy), &k) in d.data_mut().iter_mut().zip(gd).zip(mask) {
                    *v += gy * k;
                }
            }
        }
        Op::SliceCols { x, start } => {
            let len = node.value.cols();
            if let Some(d) = slot(grads, nodes, *x) {
                let n = d.cols();
                for (i, grow) in gd.chunks(len).enumerate() {
                    for (v, &gy) in d.data_mut()[i * n + start..i * n + start + len].iter_mut().zip(grow) {
                        *v += gy;
                    }
                }
            }
        }
        Op::ConcatCols(parts) => {
            let n = node.value.cols();
            let mut offset = 0;
            for p in parts {
                let w = val(*p).cols();
                if let Some(d) = slot(grads, nodes, *p) {
                    for (drow, grow) in d.data_mut().chunks_mut(w).zip(gd.chunks(n)) {
                        for (v, &gy) in drow.iter_mut().zip(&grow[offset..offset + w]) {
                            *v += gy;
                        }
                    }
                }
                offset += w;
            }
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for p in parts {
                let len = val(*p).len();
                if let Some(d) = slot(grads, nodes, *p) {
                    for (v, &gy) in d.data_mut().iter_mut().zip(&gd[offset..offset + len]) {
                        *v += gy;
                    }
                }
                offset += len;
            }
        }
        Op::RelGather { s, labels } => {
            let nk = node.value.cols();
            if let Some(d) = slot(grads, nodes, *s) {
                let r = d.cols();
                for (idx, (&l, &gy)) in labels.iter().zip(gd).enumerate() {
                    d.data_mut()[(idx / nk) * r + l] += gy;
                }
            }
        }
        Op::RelScatter { w, labels } => {
            let r = node.value.cols();
            if let Some(d) = slot(grads, nodes, *w) {
                let nk = d.cols();
                for (idx, (v, &l)) in d.data_mut().iter_mut().zip(labels).enumerate() {
                    *v += gd[(idx / nk) * r + l];
                }
            }
        }
        Op::Sum(x) => {
            if let Some(d) = slot(grads, nodes, *x) {
                let s = gd[0];
                d.data_mut().iter_mut().for_each(|v| *v += s);
            }
        }
        Op::CrossEntropy { logits, probs, targets, smoothing, count } => {
            if let Some(d) = slot(grads, nodes, *logits) {
                let v = d.cols();
                let scale = gd[0] / F::from_usize(*count).expect("usize");
                let uniform = *smoothing / F::from_usize(v).expect("usize");
                for (i, &t) in targets.iter().enumerate() {
                    if t == PAD {
                        continue;
                    }
                    let drow = &mut d.data_mut()[i * v..(i + 1) * v];
                    for j in 0..v {
                        let mut q = uniform;
                        if j == t {
                            q += F::one() - *smoothing;
                        }
                        drow[j] += scale * (probs[i * v + j] - q);
                    }
                }
            }
        }
    }
}
