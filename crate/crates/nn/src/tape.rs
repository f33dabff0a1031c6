//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Every op appends a node holding its forward value. [`Tape::backward`]
//! walks the tape in reverse and returns a [`Gradients`] table. Parameters
//! enter the tape through [`Tape::param`], which copies the current value out
//! of a [`ParamStore`] once per name.

use std::cell::{Cell, Ref, RefCell};
use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, NnError, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Variance floor inside layer normalization.
pub const LN_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Elu(Var),
    Sigmoid(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Cumsum(Var),
    Mse(Var, Var),
    Sum(Var),
    Concat {
        parts: Vec<Var>,
        axis: Axis,
    },
    Slice {
        x: Var,
        axis: Axis,
        start: usize,
    },
    Transpose(Var),
    Reshape(Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        seq_q: usize,
        seq_kv: usize,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

pub struct Tape<'s> {
    store: Option<&'s ParamStore>,
    mode: Mode,
    dropout_seed: u64,
    dropout_calls: Cell<u64>,
    nodes: RefCell<Vec<Node>>,
    param_vars: RefCell<HashMap<String, Var>>,
}

impl<'s> Tape<'s> {
    pub fn new(mode: Mode) -> Self {
        Self {
            store: None,
            mode,
            dropout_seed: 0,
            dropout_calls: Cell::new(0),
            nodes: RefCell::new(Vec::new()),
            param_vars: RefCell::new(HashMap::new()),
        }
    }

    pub fn with_store(store: &'s ParamStore, mode: Mode) -> Self {
        Self { store: Some(store), ..Self::new(mode) }
    }

    /// Seed for the counter-based dropout streams. Each dropout call on this
    /// tape draws from stream `(seed, call index)`.
    pub fn with_dropout_seed(mut self, seed: u64) -> Self {
        self.dropout_seed = seed;
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    /// Leaf that receives a gradient.
    pub fn input(&self, t: Tensor) -> Result<Var> {
        self.push("input", t, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, t: Tensor) -> Result<Var> {
        self.push("constant", t, Op::Leaf, false)
    }

    pub fn param(&self, name: &str) -> Result<Var> {
        if let Some(v) = self.param_vars.borrow().get(name) {
            return Ok(*v);
        }
        let store = self.store.ok_or(NnError::NoStore)?;
        let value = store.value(name)?.clone();
        let v = self.push("param", value, Op::Param, true)?;
        self.param_vars.borrow_mut().insert(name.to_string(), v);
        Ok(v)
    }

    fn push(&self, op_name: &'static str, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(NnError::NonFinite { op: op_name });
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, requires_grad });
        Ok(Var(nodes.len() - 1))
    }

    fn needs_grad(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].requires_grad)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
            let (m, k, k2, n) = (ta.rows(), ta.cols(), tb.rows(), tb.cols());
            if k != k2 {
                return shape_err("matmul", format!("[{m}x{k}] x [{k2}x{n}]"));
            }
            let mut c = vec![0.0; m * n];
            gemm(m, k, n, ta.data(), (k, 1), tb.data(), (n, 1), &mut c, 0.0);
            Tensor::matrix(m, n, c)?
        };
        let rg = self.needs_grad(&[a, b]);
        self.push("matmul", out, Op::MatMul(a, b), rg)
    }

    fn zip_same(&self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let nodes = self.nodes.borrow();
        let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return shape_err(op, format!("{:?} vs {:?}", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    fn map(&self, x: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let nodes = self.nodes.borrow();
        let t = &nodes[x.0].value;
        Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| f(*v)).collect())
            .expect("same shape")
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        let rg = self.needs_grad(&[a, b]);
        self.push("add", out, Op::Add(a, b), rg)
    }

    /// Adds a `[1, n]` row to every row of `a`.
    pub fn add_row(&self, a: Var, row: Var) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let (ta, tr) = (&nodes[a.0].value, &nodes[row.0].value);
            if tr.len() != ta.cols() {
                return shape_err("add_row", format!("{:?} + row {:?}", ta.shape(), tr.shape()));
            }
            let mut data = ta.data().to_vec();
            for chunk in data.chunks_mut(ta.cols()) {
                for (x, r) in chunk.iter_mut().zip(tr.data()) {
                    *x += r;
                }
            }
            Tensor::new(ta.shape().to_vec(), data)?
        };
        let rg = self.needs_grad(&[a, row]);
        self.push("add_row", out, Op::AddRow(a, row), rg)
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        let rg = self.needs_grad(&[a, b]);
        self.push("mul", out, Op::Mul(a, b), rg)
    }

    pub fn scale(&self, a: Var, c: f64) -> Result<Var> {
        let out = self.map(a, |x| c * x);
        let rg = self.needs_grad(&[a]);
        self.push("scale", out, Op::Scale(a, c), rg)
    }

    pub fn relu(&self, a: Var) -> Result<Var> {
        let out = self.map(a, |x| x.max(0.0));
        let rg = self.needs_grad(&[a]);
        self.push("relu", out, Op::Relu(a), rg)
    }

    /// ELU with alpha = 1.
    pub fn elu(&self, a: Var) -> Result<Var> {
        let out = self.map(a, |x| if x > 0.0 { x } else { x.exp_m1() });
        let rg = self.needs_grad(&[a]);
        self.push("elu", out, Op::Elu(a), rg)
    }

    pub fn sigmoid(&self, a: Var) -> Result<Var> {
        let out = self.map(a, |x| {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        });
        let rg = self.needs_grad(&[a]);
        self.push("sigmoid", out, Op::Sigmoid(a), rg)
    }

    /// Row-wise softmax.
    pub fn softmax(&self, a: Var) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let t = &nodes[a.0].value;
            let mut data = t.data().to_vec();
            for row in data.chunks_mut(t.cols()) {
                softmax_in_place(row);
            }
            Tensor::new(t.shape().to_vec(), data)?
        };
        let rg = self.needs_grad(&[a]);
        self.push("softmax", out, Op::Softmax(a), rg)
    }

    /// Row-wise layer normalization followed by the affine map
    /// `gamma * xhat + beta` with `[1, n]` gamma and beta.
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (out, xhat, inv_std) = {
            let nodes = self.nodes.borrow();
            let (t, g, b) = (&nodes[x.0].value, &nodes[gamma.0].value, &nodes[beta.0].value);
            let n = t.cols();
            if g.len() != n || b.len() != n {
                return shape_err(
                    "layer_norm",
                    format!("{:?} with gamma {:?}, beta {:?}", t.shape(), g.shape(), b.shape()),
                );
            }
            let mut xhat = vec![0.0; t.len()];
            let mut inv_std = Vec::with_capacity(t.rows());
            let mut out = vec![0.0; t.len()];
            for r in 0..t.rows() {
                let row = t.row_slice(r);
                let mean = row.iter().sum::<f64>() / n as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                let is = 1.0 / (var + LN_EPS).sqrt();
                inv_std.push(is);
                for c in 0..n {
                    let h = (row[c] - mean) * is;
                    xhat[r * n + c] = h;
                    out[r * n + c] = g.data()[c] * h + b.data()[c];
                }
            }
            (Tensor::new(t.shape().to_vec(), out)?, xhat, inv_std)
        };
        let rg = self.needs_grad(&[x, gamma, beta]);
        self.push("layer_norm", out, Op::LayerNorm { x, gamma, beta, xhat, inv_std }, rg)
    }

    /// Inverted dropout. Identity in eval mode or when `p == 0`.
    pub fn dropout(&self, x: Var, p: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return shape_err("dropout", format!("probability {p} outside [0, 1)"));
        }
        if self.mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let call = self.dropout_calls.get();
        self.dropout_calls.set(call + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(self.dropout_seed);
        rng.set_stream(call);
        let keep = 1.0 / (1.0 - p);
        let (out, mask) = {
            let nodes = self.nodes.borrow();
            let t = &nodes[x.0].value;
            let mask: Vec<f64> = (0..t.len())
                .map(|_| if rng.random::<f64>() >= p { keep } else { 0.0 })
                .collect();
            let data = t.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
            (Tensor::new(t.shape().to_vec(), data)?, mask)
        };
        let rg = self.needs_grad(&[x]);
        self.push("dropout", out, Op::Dropout { x, mask }, rg)
    }

    /// Row-wise inclusive prefix sum.
    pub fn cumsum(&self, a: Var) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let t = &nodes[a.0].value;
            let mut data = t.data().to_vec();
            for row in data.chunks_mut(t.cols()) {
                for c in 1..row.len() {
                    row[c] += row[c - 1];
                }
            }
            Tensor::new(t.shape().to_vec(), data)?
        };
        let rg = self.needs_grad(&[a]);
        self.push("cumsum", out, Op::Cumsum(a), rg)
    }

    /// Mean squared error over all elements, as a `[1, 1]` tensor.
    pub fn mse(&self, pred: Var, target: Var) -> Result<Var> {
        let out = {
            let diff = self.zip_same("mse", pred, target, |p, t| p - t)?;
            let n = diff.len().max(1) as f64;
            Tensor::scalar(diff.data().iter().map(|d| d * d).sum::<f64>() / n)
        };
        let rg = self.needs_grad(&[pred, target]);
        self.push("mse", out, Op::Mse(pred, target), rg)
    }

    /// Sum of all elements, as a `[1, 1]` tensor.
    pub fn sum(&self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).data().iter().sum());
        let rg = self.needs_grad(&[a]);
        self.push("sum", out, Op::Sum(a), rg)
    }

    pub fn concat(&self, parts: &[Var], axis: Axis) -> Result<Var> {
        if parts.is_empty() {
            return shape_err("concat", "no inputs");
        }
        let out = {
            let nodes = self.nodes.borrow();
            let ts: Vec<&Tensor> = parts.iter().map(|v| &nodes[v.0].value).collect();
            match axis {
                Axis::Cols => {
                    let rows = ts[0].rows();
                    if ts.iter().any(|t| t.rows() != rows) {
                        return shape_err("concat", "row counts differ");
                    }
                    let cols: usize = ts.iter().map(|t| t.cols()).sum();
                    let mut data = Vec::with_capacity(rows * cols);
                    for r in 0..rows {
                        for t in &ts {
                            data.extend_from_slice(t.row_slice(r));
                        }
                    }
                    Tensor::matrix(rows, cols, data)?
                }
                Axis::Rows => {
                    let cols = ts[0].cols();
                    if ts.iter().any(|t| t.cols() != cols) {
                        return shape_err("concat", "column counts differ");
                    }
                    let rows: usize = ts.iter().map(|t| t.rows()).sum();
                    let mut data = Vec::with_capacity(rows * cols);
                    for t in &ts {
                        data.extend_from_slice(t.data());
                    }
                    Tensor::matrix(rows, cols, data)?
                }
            }
        };
        let rg = self.needs_grad(parts);
        self.push("concat", out, Op::Concat { parts: parts.to_vec(), axis }, rg)
    }

    /// Contiguous range `start..start + len` along `axis`.
    pub fn slice(&self, x: Var, axis: Axis, start: usize, len: usize) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let t = &nodes[x.0].value;
            let (rows, cols) = (t.rows(), t.cols());
            match axis {
                Axis::Cols => {
                    if start + len > cols || len == 0 {
                        return shape_err("slice", format!("cols {start}..{} of {cols}", start + len));
                    }
                    let mut data = Vec::with_capacity(rows * len);
                    for r in 0..rows {
                        data.extend_from_slice(&t.row_slice(r)[start..start + len]);
                    }
                    Tensor::matrix(rows, len, data)?
                }
                Axis::Rows => {
                    if start + len > rows || len == 0 {
                        return shape_err("slice", format!("rows {start}..{} of {rows}", start + len));
                    }
                    Tensor::matrix(len, cols, t.data()[start * cols..(start + len) * cols].to_vec())?
                }
            }
        };
        let rg = self.needs_grad(&[x]);
        self.push("slice", out, Op::Slice { x, axis, start }, rg)
    }

    pub fn transpose(&self, a: Var) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let t = &nodes[a.0].value;
            let (r, c) = (t.rows(), t.cols());
            let mut data = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    data[j * r + i] = t.data()[i * c + j];
                }
            }
            Tensor::matrix(c, r, data)?
        };
        let rg = self.needs_grad(&[a]);
        self.push("transpose", out, Op::Transpose(a), rg)
    }

    pub fn reshape(&self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let out = Tensor::new(shape, self.value(a).data().to_vec())?;
        let rg = self.needs_grad(&[a]);
        self.push("reshape", out, Op::Reshape(a), rg)
    }

    /// Scaled dot-product attention over `heads` column groups.
    ///
    /// `q` holds `batch * seq_q` rows, `k` and `v` hold `batch * seq_kv` rows;
    /// rows of different batch blocks never attend to each other. `allowed`,
    /// when given, is a row-major `seq_q x seq_kv` mask of permitted links.
    pub fn attention(
        &self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        seq_q: usize,
        seq_kv: usize,
        allowed: Option<&[bool]>,
    ) -> Result<Var> {
        let (out, probs) = {
            let nodes = self.nodes.borrow();
            let (tq, tk, tv) = (&nodes[q.0].value, &nodes[k.0].value, &nodes[v.0].value);
            let d = tq.cols();
            if heads == 0 || d % heads != 0 || tk.cols() != d || tv.cols() != d {
                return shape_err("attention", format!("width {d} with {heads} heads"));
            }
            if seq_q == 0 || seq_kv == 0 || tq.rows() % seq_q != 0 || tk.rows() != tv.rows() {
                return shape_err("attention", "rows not a multiple of the sequence length");
            }
            let batch = tq.rows() / seq_q;
            if tk.rows() != batch * seq_kv {
                return shape_err("attention", "query and memory batch counts differ");
            }
            if let Some(m) = allowed {
                if m.len() != seq_q * seq_kv {
                    return shape_err("attention", "mask shape");
                }
                if m.chunks(seq_kv).any(|row| !row.iter().any(|a| *a)) {
                    return shape_err("attention", "mask row with no permitted key");
                }
            }
            let dh = d / heads;
            let scale = 1.0 / (dh as f64).sqrt();
            let mut out = vec![0.0; tq.len()];
            let mut probs = vec![0.0; batch * heads * seq_q * seq_kv];
            let (qd, kd, vd) = (tq.data(), tk.data(), tv.data());
            let mut scores = vec![0.0; seq_kv];
            for b in 0..batch {
                for h in 0..heads {
                    let off = h * dh;
                    for i in 0..seq_q {
                        let qi = &qd[(b * seq_q + i) * d + off..][..dh];
                        for (j, s) in scores.iter_mut().enumerate() {
                            let permitted = allowed.is_none_or(|m| m[i * seq_kv + j]);
                            *s = if permitted {
                                let kj = &kd[(b * seq_kv + j) * d + off..][..dh];
                                scale * dot(qi, kj)
                            } else {
                                f64::NEG_INFINITY
                            };
                        }
                        softmax_in_place(&mut scores);
                        let base = ((b * heads + h) * seq_q + i) * seq_kv;
                        probs[base..base + seq_kv].copy_from_slice(&scores);
                        let o = &mut out[(b * seq_q + i) * d + off..][..dh];
                        for (j, p) in scores.iter().enumerate() {
                            let vj = &vd[(b * seq_kv + j) * d + off..][..dh];
                            for c in 0..dh {
                                o[c] += p * vj[c];
                            }
                        }
                    }
                }
            }
            (Tensor::new(tq.shape().to_vec(), out)?, probs)
        };
        let rg = self.needs_grad(&[q, k, v]);
        self.push(
            "attention",
            out,
            Op::Attention { q, k, v, heads, seq_q, seq_kv, probs },
            rg,
        )
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let loss_shape = nodes[loss.0].value.shape().to_vec();
        if nodes[loss.0].value.len() != 1 {
            return Err(NnError::NonScalarLoss(loss_shape));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            let keep = matches!(node.op, Op::Leaf | Op::Param);
            let g = if keep {
                match &grads[i] {
                    Some(g) => g.clone(),
                    None => continue,
                }
            } else {
                match grads[i].take() {
                    Some(g) => g,
                    None => continue,
                }
            };
            for (parent, contribution) in backward_node(&nodes, node, &g) {
                if !nodes[parent.0].requires_grad {
                    continue;
                }
                match &mut grads[parent.0] {
                    Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, c)| *a += c),
                    slot @ None => *slot = Some(contribution),
                }
            }
        }
        let params = self
            .param_vars
            .borrow()
            .iter()
            .map(|(name, v)| (name.clone(), *v))
            .collect();
        Ok(Gradients { grads, params })
    }
}

/// Gradients produced by one reverse sweep.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(String, Var)>,
}

impl Gradients {
    /// Gradient with respect to a leaf; `None` if the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// `(name, gradient)` for every parameter that received one.
    pub fn params(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.params
            .iter()
            .filter_map(|(name, v)| self.get(*v).map(|g| (name.as_str(), g)))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// `c = op(a) * op(b) + beta * c` with explicit (row, col) strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n);
    assert!(k == 0 || a.len() > (m - 1) * a_strides.0 + (k - 1) * a_strides.1);
    assert!(k == 0 || b.len() > (k - 1) * b_strides.0 + (n - 1) * b_strides.1);
    // SAFETY: the asserts above bound every index dgemm touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn backward_node(nodes: &[Node], node: &Node, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
    let val = |v: &Var| &nodes[v.0].value;
    let y = node.value.data();
    match &node.op {
        Op::Leaf | Op::Param => Vec::new(),
        Op::MatMul(a, b) => {
            let (ta, tb) = (val(a), val(b));
            let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
            let mut da = vec![0.0; m * k];
            // dA = G * B^T
            gemm(m, n, k, g, (n, 1), tb.data(), (1, n), &mut da, 0.0);
            let mut db = vec![0.0; k * n];
            // dB = A^T * G
            gemm(k, m, n, ta.data(), (1, k), g, (n, 1), &mut db, 0.0);
            vec![(*a, da), (*b, db)]
        }
        Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
        Op::AddRow(a, r) => {
            let n = val(r).len();
            let mut dr = vec![0.0; n];
            for chunk in g.chunks(n) {
                dr.iter_mut().zip(chunk).for_each(|(d, x)| *d += x);
            }
            vec![(*a, g.to_vec()), (*r, dr)]
        }
        Op::Mul(a, b) => {
            let (ta, tb) = (val(a).data(), val(b).data());
            let da = g.iter().zip(tb).map(|(g, b)| g * b).collect();
            let db = g.iter().zip(ta).map(|(g, a)| g * a).collect();
            vec![(*a, da), (*b, db)]
        }
        Op::Scale(a, c) => vec![(*a, g.iter().map(|x| c * x).collect())],
        Op::Relu(a) => {
            let x = val(a).data();
            vec![(*a, g.iter().zip(x).map(|(g, x)| if *x > 0.0 { *g } else { 0.0 }).collect())]
        }
        Op::Elu(a) => {
            let d = g
                .iter()
                .zip(y)
                .map(|(g, y)| if *y > 0.0 { *g } else { g * (y + 1.0) })
                .collect();
            vec![(*a, d)]
        }
        Op::Sigmoid(a) => vec![(*a, g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect())],
        Op::Softmax(a) => {
            let n = node.value.cols();
            let mut d = vec![0.0; g.len()];
            for ((dr, gr), yr) in d.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                let s = dot(gr, yr);
                for c in 0..n {
                    dr[c] = yr[c] * (gr[c] - s);
                }
            }
            vec![(*a, d)]
        }
        Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
            let n = node.value.cols();
            let gam = val(gamma).data();
            let mut dx = vec![0.0; g.len()];
            let mut dgamma = vec![0.0; n];
            let mut dbeta = vec![0.0; n];
            let mut dxhat = vec![0.0; n];
            for (r, is) in inv_std.iter().enumerate() {
                let gr = &g[r * n..(r + 1) * n];
                let hr = &xhat[r * n..(r + 1) * n];
                for c in 0..n {
                    dxhat[c] = gr[c] * gam[c];
                    dgamma[c] += gr[c] * hr[c];
                    dbeta[c] += gr[c];
                }
                let s1: f64 = dxhat.iter().sum();
                let s2 = dot(&dxhat, hr);
                let nf = n as f64;
                for c in 0..n {
                    dx[r * n + c] = is / nf * (nf * dxhat[c] - s1 - hr[c] * s2);
                }
            }
            vec![(*x, dx), (*gamma, dgamma), (*beta, dbeta)]
        }
        Op::Dropout { x, mask } => vec![(*x, g.iter().zip(mask).map(|(g, m)| g * m).collect())],
        Op::Cumsum(a) => {
            let n = node.value.cols();
            let mut d = g.to_vec();
            for row in d.chunks_mut(n) {
                for c in (0..n.saturating_sub(1)).rev() {
                    row[c] += row[c + 1];
                }
            }
            vec![(*a, d)]
        }
        Op::Mse(p, t) => {
            let (tp, tt) = (val(p).data(), val(t).data());
            let scale = 2.0 * g[0] / tp.len().max(1) as f64;
            let dp: Vec<f64> = tp.iter().zip(tt).map(|(p, t)| scale * (p - t)).collect();
            let dt = dp.iter().map(|v| -v).collect();
            vec![(*p, dp), (*t, dt)]
        }
        Op::Sum(a) => vec![(*a, vec![g[0]; val(a).len()])],
        Op::Concat { parts, axis } => {
            let mut out = Vec::with_capacity(parts.len());
            match axis {
                Axis::Cols => {
                    let total = node.value.cols();
                    let mut offset = 0;
                    for p in parts {
                        let t = val(p);
                        let w = t.cols();
                        let mut d = Vec::with_capacity(t.len());
                        for r in 0..t.rows() {
                            d.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        offset += w;
                        out.push((*p, d));
                    }
                }
                Axis::Rows => {
                    let mut offset = 0;
                    for p in parts {
                        let len = val(p).len();
                        out.push((*p, g[offset..offset + len].to_vec()));
                        offset += len;
                    }
                }
            }
            out
        }
        Op::Slice { x, axis, start } => {
            let t = val(x);
            let mut d = vec![0.0; t.len()];
            match axis {
                Axis::Cols => {
                    let (cols, w) = (t.cols(), node.value.cols());
                    for r in 0..t.rows() {
                        d[r * cols + start..r * cols + start + w].copy_from_slice(&g[r * w..(r + 1) * w]);
                    }
                }
                Axis::Rows => {
                    let cols = t.cols();
                    d[start * cols..start * cols + g.len()].copy_from_slice(g);
                }
            }
            vec![(*x, d)]
        }
        Op::Transpose(a) => {
            let (r, c) = (node.value.rows(), node.value.cols());
            let mut d = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    d[j * r + i] = g[i * c + j];
                }
            }
            vec![(*a, d)]
        }
        Op::Reshape(a) => vec![(*a, g.to_vec())],
        Op::Attention { q, k, v, heads, seq_q, seq_kv, probs } => {
            let (tq, tk, tv) = (val(q), val(k), val(v));
            let d = tq.cols();
            let (heads, seq_q, seq_kv) = (*heads, *seq_q, *seq_kv);
            let dh = d / heads;
            let scale = 1.0 / (dh as f64).sqrt();
            let batch = tq.rows() / seq_q;
            let (qd, kd, vd) = (tq.data(), tk.data(), tv.data());
            let mut dq = vec![0.0; tq.len()];
            let mut dk = vec![0.0; tk.len()];
            let mut dv = vec![0.0; tv.len()];
            let mut dp = vec![0.0; seq_kv];
            for b in 0..batch {
                for h in 0..heads {
                    let off = h * dh;
                    for i in 0..seq_q {
                        let row = (b * seq_q + i) * d + off;
                        let go = &g[row..row + dh];
                        let base = ((b * heads + h) * seq_q + i) * seq_kv;
                        let p = &probs[base..base + seq_kv];
                        for j in 0..seq_kv {
                            let vrow = (b * seq_kv + j) * d + off;
                            dp[j] = dot(go, &vd[vrow..vrow + dh]);
                            for c in 0..dh {
                                dv[vrow + c] += p[j] * go[c];
                            }
                        }
                        let s = dot(&dp, p);
                        for j in 0..seq_kv {
                            let ds = p[j] * (dp[j] - s) * scale;
                            if ds == 0.0 {
                                continue;
                            }
                            let krow = (b * seq_kv + j) * d + off;
                            for c in 0..dh {
                                dq[row + c] += ds * kd[krow + c];
                                dk[krow + c] += ds * qd[row + c];
                            }
                        }
                    }
                }
            }
            vec![(*q, dq), (*k, dk), (*v, dv)]
        }
    }
}
