//! Reverse-mode differentiation over dense tensors.
//!
//! A [`Tape`] records every operation applied to its variables. Parameters are
//! referenced from a borrowed [`ParamStore`] rather than copied, so building a
//! tape per utterance is cheap. Calling [`Tape::backward`] walks the records in
//! reverse and returns gradients for every variable and every trainable
//! parameter that contributed to the root.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU32, Ordering};

use super::params::{ParamId, ParamStore};
use super::real::Real;
use super::tensor::{gemm, gemm_strided, Tensor};
use crate::error::{shape_err, Error, Result};

static NEXT_GENERATION: AtomicU32 = AtomicU32::new(1);

fn fresh_generation() -> u32 {
    NEXT_GENERATION.fetch_add(1, Ordering::Relaxed)
}

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    idx: u32,
    generation: u32,
}

impl Var {
    fn index(self) -> usize {
        self.idx as usize
    }
}

/// Attention mask applied by [`Tape::attention`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttnMask {
    /// Every query sees every key.
    Full,
    /// Query row `i` sees keys `0..=offset + i`.
    Causal { offset: usize },
}

enum Value<R> {
    Owned(Tensor<R>),
    Param(ParamId),
}

enum Op<R> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, R),
    AddConst(usize),
    AddRow(usize, usize),
    MulScalar(usize, usize),
    AddScalar(usize, usize),
    MatMul(usize, usize),
    Sigmoid(usize),
    Tanh(usize),
    Exp(usize),
    Log(usize),
    Gelu(usize),
    Abs(usize),
    Softmax(usize),
    LogSoftmax(usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Vec<R>,
        rstd: Vec<R>,
    },
    CumSum(usize),
    CumProd(usize),
    Clamp {
        x: usize,
        lo: R,
        hi: R,
    },
    GatherRows {
        x: usize,
        idx: Vec<usize>,
    },
    Pick {
        x: usize,
        idx: Vec<usize>,
    },
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    SliceRows {
        x: usize,
        start: usize,
    },
    SliceCols {
        x: usize,
        start: usize,
    },
    Sum(usize),
    Mean(usize),
    Reshape(usize),
    L2Normalize(usize),
    Attention {
        q: usize,
        k: usize,
        v: usize,
        heads: usize,
        probs: Vec<R>,
    },
    MonotonicAlpha {
        p: usize,
        prev: Option<usize>,
        q: Vec<R>,
    },
    ChunkwiseBeta {
        alpha: usize,
        energy: usize,
        window: usize,
        e: Vec<R>,
        denom: Vec<R>,
        ahead: Vec<R>,
    },
}

struct Node<R> {
    value: Value<R>,
    op: Op<R>,
    needs_grad: bool,
}

/// Operation record for one forward computation.
pub struct Tape<'p, R: Real = f64> {
    params: Option<&'p ParamStore<R>>,
    param_vars: Vec<Option<u32>>,
    nodes: Vec<Node<R>>,
    generation: u32,
    record_grads: bool,
}

impl<'p, R: Real> Default for Tape<'p, R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, R: Real> Tape<'p, R> {
    /// Tape without a parameter store.
    pub fn new() -> Self {
        Tape {
            params: None,
            param_vars: Vec::new(),
            nodes: Vec::new(),
            generation: fresh_generation(),
            record_grads: true,
        }
    }

    /// Tape whose parameter leaves borrow from `params`.
    pub fn with_params(params: &'p ParamStore<R>) -> Self {
        Tape {
            params: Some(params),
            param_vars: vec![None; params.len()],
            nodes: Vec::new(),
            generation: fresh_generation(),
            record_grads: true,
        }
    }

    /// Tape that never tracks gradients (inference).
    pub fn inference(params: &'p ParamStore<R>) -> Self {
        let mut t = Self::with_params(params);
        t.record_grads = false;
        t
    }

    /// Drops every record. Variables handed out before the reset become stale.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.param_vars.iter_mut().for_each(|v| *v = None);
        self.generation = fresh_generation();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn params(&self) -> Option<&'p ParamStore<R>> {
        self.params
    }

    fn tensor_at(&self, i: usize) -> &Tensor<R> {
        match &self.nodes[i].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.params.expect("parameter leaf without store").tensor(*id),
        }
    }

    fn check(&self, v: Var) -> usize {
        assert_eq!(v.generation, self.generation, "variable from a different or reset tape");
        v.index()
    }

    /// Parameters referenced by this tape so far, in id order.
    pub fn params_used(&self) -> Vec<ParamId> {
        self.param_vars
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_some())
            .map(|(i, _)| ParamId(i))
            .collect()
    }

    /// Current value of a variable.
    pub fn value(&self, v: Var) -> &Tensor<R> {
        let i = self.check(v);
        self.tensor_at(i)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn push(&mut self, value: Tensor<R>, op: Op<R>, needs_grad: bool) -> Var {
        let idx = self.nodes.len() as u32;
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            needs_grad: needs_grad && self.record_grads,
        });
        Var {
            idx,
            generation: self.generation,
        }
    }

    fn grad_of(&self, inputs: &[usize]) -> bool {
        inputs.iter().any(|&i| self.nodes[i].needs_grad)
    }

    /// Input that receives a gradient.
    pub fn variable(&mut self, value: Tensor<R>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<R>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf for a stored parameter; repeated calls return the same variable.
    pub fn param(&mut self, id: ParamId) -> Var {
        let store = self.params.expect("tape has no parameter store");
        if let Some(idx) = self.param_vars[id.index()] {
            return Var {
                idx,
                generation: self.generation,
            };
        }
        let idx = self.nodes.len() as u32;
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Leaf,
            needs_grad: self.record_grads && store.is_trainable(id),
        });
        self.param_vars[id.index()] = Some(idx);
        Var {
            idx,
            generation: self.generation,
        }
    }

    fn unary(&mut self, x: Var, f: impl Fn(R) -> R, op: impl FnOnce(usize) -> Op<R>) -> Var {
        let xi = self.check(x);
        let out = self.tensor_at(xi).map(f);
        let g = self.grad_of(&[xi]);
        self.push(out, op(xi), g)
    }

    fn same_shape(&self, op: &'static str, a: usize, b: usize) -> Result<()> {
        let (ta, tb) = (self.tensor_at(a), self.tensor_at(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        Ok(())
    }

    fn zip(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(R, R) -> R, op: fn(usize, usize) -> Op<R>) -> Result<Var> {
        let (ai, bi) = (self.check(a), self.check(b));
        self.same_shape(name, ai, bi)?;
        let (ta, tb) = (self.tensor_at(ai), self.tensor_at(bi));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(ta.shape(), data)?;
        let g = self.grad_of(&[ai, bi]);
        Ok(self.push(out, op(ai, bi), g))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn scale(&mut self, x: Var, c: R) -> Var {
        self.unary(x, |v| v * c, |i| Op::Scale(i, c))
    }

    pub fn add_const(&mut self, x: Var, c: R) -> Var {
        self.unary(x, |v| v + c, Op::AddConst)
    }

    /// `x[n×d] + b[d]`, broadcasting `b` over rows.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xi, bi) = (self.check(x), self.check(b));
        let (tx, tb) = (self.tensor_at(xi), self.tensor_at(bi));
        let (n, d) = tx.dims2();
        if tb.len() != d {
            return Err(shape_err("add_row", format!("{n}x{d} + {:?}", tb.shape())));
        }
        let mut out = tx.clone();
        for r in 0..n {
            for (o, &bv) in out.row_mut(r).iter_mut().zip(tb.data()) {
                *o = *o + bv;
            }
        }
        let g = self.grad_of(&[xi, bi]);
        Ok(self.push(out, Op::AddRow(xi, bi), g))
    }

    /// `x · s` for a one-element `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        let (xi, si) = (self.check(x), self.check(s));
        let ts = self.tensor_at(si);
        if ts.len() != 1 {
            return Err(shape_err("mul_scalar", format!("scalar has shape {:?}", ts.shape())));
        }
        let sv = ts.data()[0];
        let out = self.tensor_at(xi).map(|v| v * sv);
        let g = self.grad_of(&[xi, si]);
        Ok(self.push(out, Op::MulScalar(xi, si), g))
    }

    /// `x + s` for a one-element `s`.
    pub fn add_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        let (xi, si) = (self.check(x), self.check(s));
        let ts = self.tensor_at(si);
        if ts.len() != 1 {
            return Err(shape_err("add_scalar", format!("scalar has shape {:?}", ts.shape())));
        }
        let sv = ts.data()[0];
        let out = self.tensor_at(xi).map(|v| v + sv);
        let g = self.grad_of(&[xi, si]);
        Ok(self.push(out, Op::AddScalar(xi, si), g))
    }

    /// Matrix product of `a[m×k]` and `b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.check(a), self.check(b));
        let out = self.tensor_at(ai).matmul(self.tensor_at(bi))?;
        let g = self.grad_of(&[ai, bi]);
        Ok(self.push(out, Op::MatMul(ai, bi), g))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.tanh(), Op::Tanh)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.exp(), Op::Exp)
    }

    /// Natural logarithm; non-positive inputs are a domain error.
    pub fn log(&mut self, x: Var) -> Result<Var> {
        let xi = self.check(x);
        if let Some(bad) = self.tensor_at(xi).data().iter().find(|&&v| v <= R::zero()) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("non-positive input {bad}"),
            });
        }
        Ok(self.unary(x, |v| v.ln(), Op::Log))
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, gelu, Op::Gelu)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.abs(), Op::Abs)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Var {
        let xi = self.check(x);
        let mut out = self.tensor_at(xi).clone();
        let rows = out.rows();
        for r in 0..rows {
            softmax_in_place(out.row_mut(r), None);
        }
        let g = self.grad_of(&[xi]);
        self.push(out, Op::Softmax(xi), g)
    }

    /// Row-wise softmax over positions where `keep` is true; others are exactly 0.
    pub fn softmax_masked(&mut self, x: Var, keep: &[bool]) -> Result<Var> {
        let xi = self.check(x);
        let tx = self.tensor_at(xi);
        if keep.len() != tx.len() {
            return Err(shape_err("softmax_masked", "mask length differs from input"));
        }
        let mut out = tx.clone();
        let cols = out.cols();
        for r in 0..out.rows() {
            let mask = &keep[r * cols..(r + 1) * cols];
            if !mask.iter().any(|&k| k) {
                return Err(Error::Domain {
                    op: "softmax_masked",
                    detail: format!("row {r} is fully masked"),
                });
            }
            softmax_in_place(out.row_mut(r), Some(mask));
        }
        let g = self.grad_of(&[xi]);
        Ok(self.push(out, Op::Softmax(xi), g))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let xi = self.check(x);
        let mut out = self.tensor_at(xi).clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let m = row.iter().fold(R::neg_infinity(), |a, &b| a.max(b));
            let lse = m + row.iter().fold(R::zero(), |a, &b| a + (b - m).exp()).ln();
            row.iter_mut().for_each(|v| *v = *v - lse);
        }
        let g = self.grad_of(&[xi]);
        self.push(out, Op::LogSoftmax(xi), g)
    }

    /// Row-wise layer normalization followed by `gain ⊙ x̂ + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: R) -> Result<Var> {
        let (xi, gi, bi) = (self.check(x), self.check(gain), self.check(bias));
        let tx = self.tensor_at(xi);
        let (n, d) = tx.dims2();
        let (tg, tb) = (self.tensor_at(gi), self.tensor_at(bi));
        if tg.len() != d || tb.len() != d {
            return Err(shape_err("layer_norm", format!("width {d}, gain {:?}, bias {:?}", tg.shape(), tb.shape())));
        }
        let dr = R::of(d as f64);
        let mut xhat = vec![R::zero(); n * d];
        let mut rstd = vec![R::zero(); n];
        let mut out = vec![R::zero(); n * d];
        for r in 0..n {
            let row = tx.row(r);
            let mean = row.iter().fold(R::zero(), |a, &b| a + b) / dr;
            let var = row.iter().fold(R::zero(), |a, &b| a + (b - mean) * (b - mean)) / dr;
            let rs = R::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..d {
                let xh = (row[c] - mean) * rs;
                xhat[r * d + c] = xh;
                out[r * d + c] = xh * tg.data()[c] + tb.data()[c];
            }
        }
        let out = Tensor::new(tx.shape(), out)?;
        let g = self.grad_of(&[xi, gi, bi]);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x: xi,
                gain: gi,
                bias: bi,
                xhat,
                rstd,
            },
            g,
        ))
    }

    /// Inclusive cumulative sum along each row.
    pub fn cumsum(&mut self, x: Var) -> Var {
        let xi = self.check(x);
        let mut out = self.tensor_at(xi).clone();
        for r in 0..out.rows() {
            let mut acc = R::zero();
            for v in out.row_mut(r) {
                acc = acc + *v;
                *v = acc;
            }
        }
        let g = self.grad_of(&[xi]);
        self.push(out, Op::CumSum(xi), g)
    }

    /// Inclusive cumulative product along each row.
    pub fn cumprod(&mut self, x: Var) -> Var {
        let xi = self.check(x);
        let mut out = self.tensor_at(xi).clone();
        for r in 0..out.rows() {
            let mut acc = R::one();
            for v in out.row_mut(r) {
                acc = acc * *v;
                *v = acc;
            }
        }
        let g = self.grad_of(&[xi]);
        self.push(out, Op::CumProd(xi), g)
    }

    pub fn clamp(&mut self, x: Var, lo: R, hi: R) -> Var {
        self.unary(x, |v| v.max(lo).min(hi), |i| Op::Clamp { x: i, lo, hi })
    }

    /// Selects rows of `x` by index (rows may repeat).
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xi = self.check(x);
        let tx = self.tensor_at(xi);
        let (n, d) = tx.dims2();
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            if i >= n {
                return Err(Error::Bounds { index: i, bound: n });
            }
            out.extend_from_slice(tx.row(i));
        }
        let out = Tensor::matrix(idx.len(), d, out)?;
        let g = self.grad_of(&[xi]);
        Ok(self.push(out, Op::GatherRows { x: xi, idx: idx.to_vec() }, g))
    }

    /// Embedding lookup: rows of `table` for each token id.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let vocab = self.value(table).rows();
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(Error::Vocabulary(bad));
        }
        self.gather_rows(table, ids)
    }

    /// `out[r] = x[r, idx[r]]`.
    pub fn pick(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xi = self.check(x);
        let tx = self.tensor_at(xi);
        let (n, d) = tx.dims2();
        if idx.len() != n {
            return Err(shape_err("pick", format!("{} indices for {} rows", idx.len(), n)));
        }
        let mut out = Vec::with_capacity(n);
        for (r, &c) in idx.iter().enumerate() {
            if c >= d {
                return Err(Error::Bounds { index: c, bound: d });
            }
            out.push(tx.at(r, c));
        }
        let out = Tensor::new(&[n], out)?;
        let g = self.grad_of(&[xi]);
        Ok(self.push(out, Op::Pick { x: xi, idx: idx.to_vec() }, g))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let idx: Vec<usize> = parts.iter().map(|&p| self.check(p)).collect();
        let ts: Vec<&Tensor<R>> = idx.iter().map(|&i| self.tensor_at(i)).collect();
        let out = Tensor::vstack(&ts)?;
        let g = self.grad_of(&idx);
        Ok(self.push(out, Op::ConcatRows(idx), g))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let idx: Vec<usize> = parts.iter().map(|&p| self.check(p)).collect();
        let rows = idx.first().map(|&i| self.tensor_at(i).rows()).unwrap_or(0);
        let mut cols = 0;
        for &i in &idx {
            if self.tensor_at(i).rows() != rows {
                return Err(shape_err("concat_cols", "row counts differ"));
            }
            cols += self.tensor_at(i).cols();
        }
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &i in &idx {
                out.extend_from_slice(self.tensor_at(i).row(r));
            }
        }
        let out = Tensor::matrix(rows, cols, out)?;
        let g = self.grad_of(&idx);
        Ok(self.push(out, Op::ConcatCols(idx), g))
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xi = self.check(x);
        let n = self.tensor_at(xi).rows();
        if start > end || end > n {
            return Err(shape_err("slice_rows", format!("{start}..{end} of {n} rows")));
        }
        let out = self.tensor_at(xi).slice_rows(start, end);
        let g = self.grad_of(&[xi]);
        Ok(self.push(out, Op::SliceRows { x: xi, start }, g))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xi = self.check(x);
        let tx = self.tensor_at(xi);
        let (n, d) = tx.dims2();
        if start > end || end > d {
            return Err(shape_err("slice_cols", format!("{start}..{end} of {d} columns")));
        }
        let mut out = Vec::with_capacity(n * (end - start));
        for r in 0..n {
            out.extend_from_slice(&tx.row(r)[start..end]);
        }
        let out = Tensor::matrix(n, end - start, out)?;
        let g = self.grad_of(&[xi]);
        Ok(self.push(out, Op::SliceCols { x: xi, start }, g))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let xi = self.check(x);
        let out = Tensor::scalar(self.tensor_at(xi).sum());
        let g = self.grad_of(&[xi]);
        self.push(out, Op::Sum(xi), g)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xi = self.check(x);
        let t = self.tensor_at(xi);
        let out = Tensor::scalar(t.sum() / R::of(t.len() as f64));
        let g = self.grad_of(&[xi]);
        self.push(out, Op::Mean(xi), g)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let xi = self.check(x);
        let out = self.tensor_at(xi).clone().reshaped(shape)?;
        let g = self.grad_of(&[xi]);
        Ok(self.push(out, Op::Reshape(xi), g))
    }

    /// `x / ‖x‖₂` over all elements.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let xi = self.check(x);
        let t = self.tensor_at(xi);
        let norm = t.data().iter().fold(R::zero(), |a, &b| a + b * b).sqrt();
        if norm <= R::zero() {
            return Err(Error::Domain {
                op: "l2_normalize",
                detail: "zero vector".into(),
            });
        }
        let out = t.map(|v| v / norm);
        let g = self.grad_of(&[xi]);
        Ok(self.push(out, Op::L2Normalize(xi), g))
    }

    /// Multi-head scaled dot-product attention.
    ///
    /// `q` is `Tq×d`, `k` and `v` are `Tk×d`; heads split `d` into equal
    /// column blocks.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, mask: AttnMask) -> Result<Var> {
        let (qi, ki, vi) = (self.check(q), self.check(k), self.check(v));
        let (tq, tk, tv) = (self.tensor_at(qi), self.tensor_at(ki), self.tensor_at(vi));
        let (nq, d) = tq.dims2();
        let (nk, dk) = tk.dims2();
        if dk != d || tv.dims2() != (nk, d) || heads == 0 || d % heads != 0 {
            return Err(shape_err(
                "attention",
                format!("q {:?}, k {:?}, v {:?}, heads {heads}", tq.shape(), tk.shape(), tv.shape()),
            ));
        }
        if let AttnMask::Causal { offset } = mask {
            if offset + nq > nk {
                return Err(shape_err("attention", format!("causal offset {offset} + {nq} queries > {nk} keys")));
            }
        }
        let dh = d / heads;
        let scale = R::one() / R::of(dh as f64).sqrt();
        let mut probs = vec![R::zero(); heads * nq * nk];
        let mut out = vec![R::zero(); nq * d];
        for h in 0..heads {
            let p = &mut probs[h * nq * nk..(h + 1) * nq * nk];
            gemm_strided(
                nq,
                dh,
                nk,
                scale,
                (tq.data(), h * dh, d as isize, 1),
                (tk.data(), h * dh, 1, d as isize),
                R::zero(),
                (&mut *p, 0, nk as isize, 1),
            );
            for r in 0..nq {
                let row = &mut p[r * nk..(r + 1) * nk];
                let visible = match mask {
                    AttnMask::Full => nk,
                    AttnMask::Causal { offset } => offset + r + 1,
                };
                softmax_prefix(row, visible);
            }
            gemm_strided(
                nq,
                nk,
                dh,
                R::one(),
                (&*p, 0, nk as isize, 1),
                (tv.data(), h * dh, d as isize, 1),
                R::zero(),
                (&mut out[..], h * dh, d as isize, 1),
            );
        }
        let out = Tensor::matrix(nq, d, out)?;
        let g = self.grad_of(&[qi, ki, vi]);
        Ok(self.push(
            out,
            Op::Attention {
                q: qi,
                k: ki,
                v: vi,
                heads,
                probs,
            },
            g,
        ))
    }

    /// One row of the strictly monotonic attend-probability recurrence.
    ///
    /// `prev` is the previous output step's marginal row; `None` means the
    /// previous step attended the virtual frame 0.
    pub fn monotonic_alpha(&mut self, p: Var, prev: Option<Var>) -> Result<Var> {
        let pi = self.check(p);
        let prev_i = prev.map(|v| self.check(v));
        let tp = self.tensor_at(pi);
        let n = tp.len();
        if let Some(bad) = tp.data().iter().find(|&&v| !(v >= R::zero() && v <= R::one())) {
            return Err(Error::Domain {
                op: "monotonic_alpha",
                detail: format!("selection probability {bad} outside [0, 1]"),
            });
        }
        let prev_row = match prev_i {
            Some(j) => {
                let t = self.tensor_at(j);
                if t.len() != n {
                    return Err(shape_err("monotonic_alpha", format!("p has {n} frames, previous row {}", t.len())));
                }
                Some(t.data())
            }
            None => None,
        };
        let (alpha, q) = alpha_row(tp.data(), prev_row);
        let out = Tensor::new(tp.shape(), alpha)?;
        let mut inputs = vec![pi];
        inputs.extend(prev_i);
        let g = self.grad_of(&inputs);
        Ok(self.push(out, Op::MonotonicAlpha { p: pi, prev: prev_i, q }, g))
    }

    /// Expected chunkwise attention weights for one output step.
    ///
    /// Each attend position `k` spreads its mass `alpha[k]` over the window
    /// `k-window+1..=k` with softmax weights from `energy`.
    pub fn chunkwise_beta(&mut self, alpha: Var, energy: Var, window: usize) -> Result<Var> {
        let (ai, ei) = (self.check(alpha), self.check(energy));
        let (ta, te) = (self.tensor_at(ai), self.tensor_at(ei));
        if ta.len() != te.len() || window == 0 {
            return Err(shape_err("chunkwise_beta", format!("alpha {:?}, energy {:?}, window {window}", ta.shape(), te.shape())));
        }
        let fw = beta_row(ta.data(), te.data(), window);
        let out = Tensor::new(ta.shape(), fw.beta)?;
        let g = self.grad_of(&[ai, ei]);
        Ok(self.push(
            out,
            Op::ChunkwiseBeta {
                alpha: ai,
                energy: ei,
                window,
                e: fw.e,
                denom: fw.denom,
                ahead: fw.ahead,
            },
            g,
        ))
    }

    /// Gradient of a one-element root with seed 1.
    pub fn backward_scalar(&self, root: Var) -> Result<Gradients<R>> {
        self.backward(root, Tensor::scalar(R::one()))
    }

    /// Reverse pass from `root` seeded with `seed`.
    pub fn backward(&self, root: Var, seed: Tensor<R>) -> Result<Gradients<R>> {
        if root.generation != self.generation || root.index() >= self.nodes.len() {
            return Err(Error::StaleTape);
        }
        let ri = root.index();
        if seed.len() != self.tensor_at(ri).len() {
            return Err(shape_err("backward", format!("seed {:?} vs root {:?}", seed.shape(), self.tensor_at(ri).shape())));
        }
        let mut grads: Vec<Option<Tensor<R>>> = Vec::with_capacity(ri + 1);
        grads.resize_with(ri + 1, || None);
        grads[ri] = Some(seed.reshaped(self.tensor_at(ri).shape())?);
        for i in (0..=ri).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            generation: self.generation,
            param_vars: self.param_vars.clone(),
        })
    }

    fn backprop_node(&self, i: usize, g: &Tensor<R>, grads: &mut [Option<Tensor<R>>]) {
        let node = &self.nodes[i];
        let out = self.tensor_at(i);
        let wants = |j: usize| self.nodes[j].needs_grad;
        let acc = |grads: &mut [Option<Tensor<R>>], j: usize, t: Tensor<R>| {
            if !self.nodes[j].needs_grad {
                return;
            }
            match &mut grads[j] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        let elementwise = |x: usize, f: &dyn Fn(R, R, R) -> R| -> Tensor<R> {
            let tx = self.tensor_at(x);
            let data = g
                .data()
                .iter()
                .zip(tx.data())
                .zip(out.data())
                .map(|((&gv, &xv), &yv)| f(gv, xv, yv))
                .collect();
            Tensor::new(tx.shape(), data).unwrap()
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(grads, *a, g.clone().reshaped(self.tensor_at(*a).shape()).unwrap());
                acc(grads, *b, g.clone().reshaped(self.tensor_at(*b).shape()).unwrap());
            }
            Op::Sub(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.tensor_at(*a), self.tensor_at(*b));
                if wants(*a) {
                    let d = g.data().iter().zip(tb.data()).map(|(&x, &y)| x * y).collect();
                    acc(grads, *a, Tensor::new(ta.shape(), d).unwrap());
                }
                if wants(*b) {
                    let d = g.data().iter().zip(ta.data()).map(|(&x, &y)| x * y).collect();
                    acc(grads, *b, Tensor::new(tb.shape(), d).unwrap());
                }
            }
            Op::Scale(x, c) => acc(grads, *x, g.map(|v| v * *c)),
            Op::AddConst(x) => acc(grads, *x, g.clone()),
            Op::AddRow(x, b) => {
                acc(grads, *x, g.clone());
                if wants(*b) {
                    let tb = self.tensor_at(*b);
                    let d = tb.len();
                    let mut gb = vec![R::zero(); d];
                    for r in 0..g.rows() {
                        for (s, &v) in gb.iter_mut().zip(g.row(r)) {
                            *s = *s + v;
                        }
                    }
                    acc(grads, *b, Tensor::new(tb.shape(), gb).unwrap());
                }
            }
            Op::MulScalar(x, s) => {
                let tx = self.tensor_at(*x);
                let ts = self.tensor_at(*s);
                let sv = ts.data()[0];
                acc(grads, *x, g.map(|v| v * sv));
                if wants(*s) {
                    let d = g.data().iter().zip(tx.data()).fold(R::zero(), |a, (&gv, &xv)| a + gv * xv);
                    acc(grads, *s, Tensor::new(ts.shape(), vec![d]).unwrap());
                }
            }
            Op::AddScalar(x, s) => {
                acc(grads, *x, g.clone());
                if wants(*s) {
                    let ts = self.tensor_at(*s);
                    acc(grads, *s, Tensor::new(ts.shape(), vec![g.sum()]).unwrap());
                }
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.tensor_at(*a), self.tensor_at(*b));
                let (m, k) = ta.dims2();
                let n = tb.cols();
                if wants(*a) {
                    let mut ga = vec![R::zero(); m * k];
                    gemm(&mut ga, g.data(), tb.data(), m, n, k, false, true, R::one(), R::zero());
                    acc(grads, *a, Tensor::new(ta.shape(), ga).unwrap());
                }
                if wants(*b) {
                    let mut gb = vec![R::zero(); k * n];
                    gemm(&mut gb, ta.data(), g.data(), k, m, n, true, false, R::one(), R::zero());
                    acc(grads, *b, Tensor::new(tb.shape(), gb).unwrap());
                }
            }
            Op::Sigmoid(x) => acc(grads, *x, elementwise(*x, &|gv, _, y| gv * y * (R::one() - y))),
            Op::Tanh(x) => acc(grads, *x, elementwise(*x, &|gv, _, y| gv * (R::one() - y * y))),
            Op::Exp(x) => acc(grads, *x, elementwise(*x, &|gv, _, y| gv * y)),
            Op::Log(x) => acc(grads, *x, elementwise(*x, &|gv, xv, _| gv / xv)),
            Op::Gelu(x) => acc(grads, *x, elementwise(*x, &|gv, xv, _| gv * gelu_grad(xv))),
            Op::Abs(x) => acc(
                grads,
                *x,
                elementwise(*x, &|gv, xv, _| {
                    if xv > R::zero() {
                        gv
                    } else if xv < R::zero() {
                        -gv
                    } else {
                        R::zero()
                    }
                }),
            ),
            Op::Softmax(x) => {
                let mut gx = g.clone();
                for r in 0..out.rows() {
                    let y = out.row(r);
                    let gr = gx.row_mut(r);
                    let dot = gr.iter().zip(y).fold(R::zero(), |a, (&gv, &yv)| a + gv * yv);
                    for (gv, &yv) in gr.iter_mut().zip(y) {
                        *gv = yv * (*gv - dot);
                    }
                }
                acc(grads, *x, gx.reshaped(self.tensor_at(*x).shape()).unwrap());
            }
            Op::LogSoftmax(x) => {
                let mut gx = g.clone();
                for r in 0..out.rows() {
                    let y = out.row(r);
                    let gr = gx.row_mut(r);
                    let total = gr.iter().fold(R::zero(), |a, &b| a + b);
                    for (gv, &yv) in gr.iter_mut().zip(y) {
                        *gv = *gv - yv.exp() * total;
                    }
                }
                acc(grads, *x, gx);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let tg = self.tensor_at(*gain);
                let (n, d) = g.dims2();
                let dr = R::of(d as f64);
                if wants(*gain) || wants(*bias) {
                    let mut gg = vec![R::zero(); d];
                    let mut gb = vec![R::zero(); d];
                    for r in 0..n {
                        for c in 0..d {
                            let gv = g.data()[r * d + c];
                            gg[c] = gg[c] + gv * xhat[r * d + c];
                            gb[c] = gb[c] + gv;
                        }
                    }
                    acc(grads, *gain, Tensor::new(tg.shape(), gg).unwrap());
                    acc(grads, *bias, Tensor::new(self.tensor_at(*bias).shape(), gb).unwrap());
                }
                if wants(*x) {
                    let mut gx = vec![R::zero(); n * d];
                    for r in 0..n {
                        let mut mean_dxh = R::zero();
                        let mut mean_dxh_xh = R::zero();
                        for c in 0..d {
                            let dxh = g.data()[r * d + c] * tg.data()[c];
                            mean_dxh = mean_dxh + dxh;
                            mean_dxh_xh = mean_dxh_xh + dxh * xhat[r * d + c];
                        }
                        mean_dxh = mean_dxh / dr;
                        mean_dxh_xh = mean_dxh_xh / dr;
                        for c in 0..d {
                            let dxh = g.data()[r * d + c] * tg.data()[c];
                            gx[r * d + c] = rstd[r] * (dxh - mean_dxh - xhat[r * d + c] * mean_dxh_xh);
                        }
                    }
                    acc(grads, *x, Tensor::new(self.tensor_at(*x).shape(), gx).unwrap());
                }
            }
            Op::CumSum(x) => {
                let mut gx = g.clone();
                for r in 0..gx.rows() {
                    let mut run = R::zero();
                    for v in gx.row_mut(r).iter_mut().rev() {
                        run = run + *v;
                        *v = run;
                    }
                }
                acc(grads, *x, gx);
            }
            Op::CumProd(x) => {
                // d y_j / d x_l = E_l · Π_{l<m≤j} x_m with E_l the exclusive prefix
                // product, accumulated right-to-left without dividing by x_l.
                let tx = self.tensor_at(*x);
                let mut gx = tx.clone();
                for r in 0..tx.rows() {
                    let xr = tx.row(r);
                    let gr = g.row(r);
                    let n = xr.len();
                    let mut tail = R::zero();
                    let mut suffix = vec![R::zero(); n];
                    for l in (0..n).rev() {
                        tail = if l + 1 < n { gr[l] + xr[l + 1] * tail } else { gr[l] };
                        suffix[l] = tail;
                    }
                    let mut excl = R::one();
                    let out_row = gx.row_mut(r);
                    for l in 0..n {
                        out_row[l] = excl * suffix[l];
                        excl = excl * xr[l];
                    }
                }
                acc(grads, *x, gx);
            }
            Op::Clamp { x, lo, hi } => {
                let (lo, hi) = (*lo, *hi);
                acc(grads, *x, elementwise(*x, &|gv, xv, _| if xv >= lo && xv <= hi { gv } else { R::zero() }))
            }
            Op::GatherRows { x, idx } => {
                let tx = self.tensor_at(*x);
                let mut gx = Tensor::zeros(tx.shape());
                for (r, &src) in idx.iter().enumerate() {
                    for (d, &v) in gx.row_mut(src).iter_mut().zip(g.row(r)) {
                        *d = *d + v;
                    }
                }
                acc(grads, *x, gx);
            }
            Op::Pick { x, idx } => {
                let tx = self.tensor_at(*x);
                let mut gx = Tensor::zeros(tx.shape());
                let d = tx.cols();
                for (r, &c) in idx.iter().enumerate() {
                    gx.data_mut()[r * d + c] = g.data()[r];
                }
                acc(grads, *x, gx);
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let tp = self.tensor_at(p);
                    let len = tp.len();
                    if wants(p) {
                        let part = Tensor::new(tp.shape(), g.data()[start..start + len].to_vec()).unwrap();
                        acc(grads, p, part);
                    }
                    start += len;
                }
            }
            Op::ConcatCols(parts) => {
                let mut col = 0;
                for &p in parts {
                    let tp = self.tensor_at(p);
                    let (n, w) = tp.dims2();
                    if wants(p) {
                        let mut d = Vec::with_capacity(n * w);
                        for r in 0..n {
                            d.extend_from_slice(&g.row(r)[col..col + w]);
                        }
                        acc(grads, p, Tensor::new(tp.shape(), d).unwrap());
                    }
                    col += w;
                }
            }
            Op::SliceRows { x, start } => {
                let tx = self.tensor_at(*x);
                let mut gx = Tensor::zeros(tx.shape());
                let c = tx.cols();
                gx.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                acc(grads, *x, gx);
            }
            Op::SliceCols { x, start } => {
                let tx = self.tensor_at(*x);
                let mut gx = Tensor::zeros(tx.shape());
                let w = g.cols();
                for r in 0..g.rows() {
                    gx.row_mut(r)[*start..*start + w].copy_from_slice(g.row(r));
                }
                acc(grads, *x, gx);
            }
            Op::Sum(x) => {
                let gv = g.data()[0];
                acc(grads, *x, Tensor::full(self.tensor_at(*x).shape(), gv));
            }
            Op::Mean(x) => {
                let tx = self.tensor_at(*x);
                let gv = g.data()[0] / R::of(tx.len() as f64);
                acc(grads, *x, Tensor::full(tx.shape(), gv));
            }
            Op::Reshape(x) => acc(grads, *x, g.clone().reshaped(self.tensor_at(*x).shape()).unwrap()),
            Op::L2Normalize(x) => {
                let tx = self.tensor_at(*x);
                let norm = tx.data().iter().fold(R::zero(), |a, &b| a + b * b).sqrt();
                let dot = g.data().iter().zip(out.data()).fold(R::zero(), |a, (&gv, &yv)| a + gv * yv);
                let d = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(&gv, &yv)| (gv - yv * dot) / norm)
                    .collect();
                acc(grads, *x, Tensor::new(tx.shape(), d).unwrap());
            }
            Op::Attention { q, k, v, heads, probs } => {
                let (tq, tk, tv) = (self.tensor_at(*q), self.tensor_at(*k), self.tensor_at(*v));
                let (nq, d) = tq.dims2();
                let nk = tk.rows();
                let dh = d / heads;
                let scale = R::one() / R::of(dh as f64).sqrt();
                let mut gq = vec![R::zero(); nq * d];
                let mut gk = vec![R::zero(); nk * d];
                let mut gv = vec![R::zero(); nk * d];
                let mut dp = vec![R::zero(); nq * nk];
                for h in 0..*heads {
                    let p = &probs[h * nq * nk..(h + 1) * nq * nk];
                    gemm_strided(
                        nq,
                        dh,
                        nk,
                        R::one(),
                        (g.data(), h * dh, d as isize, 1),
                        (tv.data(), h * dh, 1, d as isize),
                        R::zero(),
                        (&mut dp[..], 0, nk as isize, 1),
                    );
                    gemm_strided(
                        nk,
                        nq,
                        dh,
                        R::one(),
                        (p, 0, 1, nk as isize),
                        (g.data(), h * dh, d as isize, 1),
                        R::one(),
                        (&mut gv[..], h * dh, d as isize, 1),
                    );
                    for r in 0..nq {
                        let pr = &p[r * nk..(r + 1) * nk];
                        let dr = &mut dp[r * nk..(r + 1) * nk];
                        let dot = pr.iter().zip(dr.iter()).fold(R::zero(), |a, (&x, &y)| a + x * y);
                        for (dv, &pv) in dr.iter_mut().zip(pr) {
                            *dv = pv * (*dv - dot);
                        }
                    }
                    gemm_strided(
                        nq,
                        nk,
                        dh,
                        scale,
                        (&dp[..], 0, nk as isize, 1),
                        (tk.data(), h * dh, d as isize, 1),
                        R::one(),
                        (&mut gq[..], h * dh, d as isize, 1),
                    );
                    gemm_strided(
                        nk,
                        nq,
                        dh,
                        scale,
                        (&dp[..], 0, 1, nk as isize),
                        (tq.data(), h * dh, d as isize, 1),
                        R::one(),
                        (&mut gk[..], h * dh, d as isize, 1),
                    );
                }
                acc(grads, *q, Tensor::new(tq.shape(), gq).unwrap());
                acc(grads, *k, Tensor::new(tk.shape(), gk).unwrap());
                acc(grads, *v, Tensor::new(tv.shape(), gv).unwrap());
            }
            Op::MonotonicAlpha { p, prev, q } => {
                let tp = self.tensor_at(*p);
                let (gp, gprev) = alpha_row_backward(tp.data(), q, g.data());
                acc(grads, *p, Tensor::new(tp.shape(), gp).unwrap());
                if let Some(j) = prev {
                    acc(grads, *j, Tensor::new(self.tensor_at(*j).shape(), gprev).unwrap());
                }
            }
            Op::ChunkwiseBeta {
                alpha,
                energy,
                window,
                e,
                denom,
                ahead,
            } => {
                let ta = self.tensor_at(*alpha);
                let (ga, gu) = beta_row_backward(ta.data(), e, denom, ahead, g.data(), *window);
                acc(grads, *alpha, Tensor::new(ta.shape(), ga).unwrap());
                acc(grads, *energy, Tensor::new(self.tensor_at(*energy).shape(), gu).unwrap());
            }
        }
    }
}

/// Result of a reverse pass.
pub struct Gradients<R: Real = f64> {
    grads: Vec<Option<Tensor<R>>>,
    generation: u32,
    param_vars: Vec<Option<u32>>,
}

impl<R: Real> Gradients<R> {
    /// Gradient with respect to a recorded variable, if it was reached.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<R>> {
        if v.generation != self.generation {
            return None;
        }
        self.grads.get(v.index()).and_then(|g| g.as_ref())
    }

    /// Gradient for a parameter; `None` if it never reached the root.
    pub fn param(&self, id: ParamId) -> Option<&Tensor<R>> {
        let idx = (*self.param_vars.get(id.index())?)?;
        self.grads.get(idx as usize).and_then(|g| g.as_ref())
    }

    /// Dense per-parameter gradients; unreached parameters get zeros.
    pub fn into_param_grads(self, store: &ParamStore<R>) -> ParamGrads<R> {
        let mut grads = self.grads;
        let per_param = store
            .ids()
            .map(|id| {
                self.param_vars
                    .get(id.index())
                    .copied()
                    .flatten()
                    .and_then(|idx| grads.get_mut(idx as usize).and_then(|g| g.take()))
                    .unwrap_or_else(|| Tensor::zeros(store.tensor(id).shape()))
            })
            .collect();
        ParamGrads { grads: per_param }
    }
}

/// Gradient tensors indexed by [`ParamId`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads<R = f64> {
    grads: Vec<Tensor<R>>,
}

impl<R: Real> ParamGrads<R> {
    pub fn zeros_like(store: &ParamStore<R>) -> Self {
        ParamGrads {
            grads: store.ids().map(|id| Tensor::zeros(store.tensor(id).shape())).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor<R> {
        &self.grads[id.index()]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<R> {
        &mut self.grads[id.index()]
    }

    pub fn accumulate(&mut self, other: &ParamGrads<R>) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, c: R) {
        for g in &mut self.grads {
            g.data_mut().iter_mut().for_each(|v| *v = *v * c);
        }
    }

    pub fn global_norm(&self) -> R {
        self.grads
            .iter()
            .flat_map(|g| g.data().iter())
            .fold(R::zero(), |a, &b| a + b * b)
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().all(|g| g.all_finite())
    }
}

#[inline]
pub fn sigmoid<R: Real>(x: R) -> R {
    if x >= R::zero() {
        R::one() / (R::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (R::one() + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[inline]
pub fn gelu<R: Real>(x: R) -> R {
    let inner = R::of(GELU_C) * (x + R::of(GELU_A) * x * x * x);
    R::of(0.5) * x * (R::one() + inner.tanh())
}

#[inline]
fn gelu_grad<R: Real>(x: R) -> R {
    let inner = R::of(GELU_C) * (x + R::of(GELU_A) * x * x * x);
    let t = inner.tanh();
    let dinner = R::of(GELU_C) * (R::one() + R::of(3.0 * GELU_A) * x * x);
    R::of(0.5) * (R::one() + t) + R::of(0.5) * x * (R::one() - t * t) * dinner
}

fn softmax_in_place<R: Real>(row: &mut [R], keep: Option<&[bool]>) {
    let kept = |j: usize| keep.map_or(true, |k| k[j]);
    let m = row
        .iter()
        .enumerate()
        .filter(|(j, _)| kept(*j))
        .fold(R::neg_infinity(), |a, (_, &b)| a.max(b));
    let mut total = R::zero();
    for (j, v) in row.iter_mut().enumerate() {
        if kept(j) {
            *v = (*v - m).exp();
            total = total + *v;
        } else {
            *v = R::zero();
        }
    }
    row.iter_mut().for_each(|v| *v = *v / total);
}

/// Softmax over the first `visible` entries; the rest are set to zero.
fn softmax_prefix<R: Real>(row: &mut [R], visible: usize) {
    let (head, tail) = row.split_at_mut(visible);
    softmax_in_place(head, None);
    tail.iter_mut().for_each(|v| *v = R::zero());
}

/// Forward recurrence of one marginal row; returns `(alpha, q)`.
pub(crate) fn alpha_row<R: Real>(p: &[R], prev: Option<&[R]>) -> (Vec<R>, Vec<R>) {
    let n = p.len();
    let mut q = vec![R::zero(); n];
    let mut alpha = vec![R::zero(); n];
    for j in 0..n {
        q[j] = if j == 0 {
            if prev.is_none() {
                R::one()
            } else {
                R::zero()
            }
        } else {
            let carried = prev.map_or(R::zero(), |a| a[j - 1]);
            (R::one() - p[j - 1]) * q[j - 1] + carried
        };
        alpha[j] = p[j] * q[j];
    }
    (alpha, q)
}

fn alpha_row_backward<R: Real>(p: &[R], q: &[R], galpha: &[R]) -> (Vec<R>, Vec<R>) {
    let n = p.len();
    let mut gp = vec![R::zero(); n];
    let mut gprev = vec![R::zero(); n];
    let mut gq_next = R::zero();
    for j in (0..n).rev() {
        let has_next = j + 1 < n;
        let carry = if has_next { gq_next } else { R::zero() };
        gp[j] = galpha[j] * q[j] - carry * q[j];
        if has_next {
            gprev[j] = gq_next;
        }
        gq_next = galpha[j] * p[j] + carry * (R::one() - p[j]);
    }
    (gp, gprev)
}

pub(crate) struct BetaForward<R> {
    pub beta: Vec<R>,
    pub e: Vec<R>,
    pub denom: Vec<R>,
    pub ahead: Vec<R>,
}

/// Expected chunkwise attention for one row (shift-invariant in `energy`).
pub(crate) fn beta_row<R: Real>(alpha: &[R], energy: &[R], window: usize) -> BetaForward<R> {
    let n = alpha.len();
    let m = energy.iter().fold(R::neg_infinity(), |a, &b| a.max(b));
    let e: Vec<R> = energy.iter().map(|&u| (u - m).exp()).collect();
    let mut denom = vec![R::zero(); n];
    let mut ratio = vec![R::zero(); n];
    for k in 0..n {
        let lo = (k + 1).saturating_sub(window);
        denom[k] = e[lo..=k].iter().fold(R::zero(), |a, &b| a + b);
        ratio[k] = if denom[k] > R::zero() { alpha[k] / denom[k] } else { R::zero() };
    }
    let mut ahead = vec![R::zero(); n];
    let mut beta = vec![R::zero(); n];
    for j in 0..n {
        let hi = (j + window).min(n);
        ahead[j] = ratio[j..hi].iter().fold(R::zero(), |a, &b| a + b);
        beta[j] = if window == 1 && denom[j] > R::zero() { alpha[j] } else { e[j] * ahead[j] };
    }
    BetaForward { beta, e, denom, ahead }
}

fn beta_row_backward<R: Real>(alpha: &[R], e: &[R], denom: &[R], ahead: &[R], gbeta: &[R], window: usize) -> (Vec<R>, Vec<R>) {
    let n = alpha.len();
    let mut galpha = vec![R::zero(); n];
    let mut gdenom = vec![R::zero(); n];
    for k in 0..n {
        if denom[k] <= R::zero() {
            continue;
        }
        let lo = (k + 1).saturating_sub(window);
        let gr = (lo..=k).fold(R::zero(), |a, j| a + gbeta[j] * e[j]);
        galpha[k] = gr / denom[k];
        gdenom[k] = -gr * alpha[k] / (denom[k] * denom[k]);
    }
    let mut genergy = vec![R::zero(); n];
    for j in 0..n {
        let hi = (j + window).min(n);
        let from_denoms = gdenom[j..hi].iter().fold(R::zero(), |a, &b| a + b);
        genergy[j] = (gbeta[j] * ahead[j] + from_denoms) * e[j];
    }
    (galpha, genergy)
}
