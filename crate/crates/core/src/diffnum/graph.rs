//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every primitive applied to its nodes; [`Graph::backward`]
//! walks the tape in reverse and returns the gradient of a scalar node with
//! respect to every node that influenced it. Reductions accumulate
//! sequentially so results are bitwise reproducible.

use std::cmp::Ordering;

use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Gather { param: ParamId, rows: Vec<usize> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Reshape(Var),
    BroadcastRows(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Abs(Var),
    Powi(Var, i32),
    Softmax(Var),
    LogSoftmax(Var),
    L2Normalize(Var),
    Norm2(Var),
    Sum(Var),
    Mean(Var),
    SumLast(Var),
    MeanAxis0(Var),
    FrobeniusSq(Var),
    SortDesc { input: Var, perm: Vec<usize> },
    WeightedPositions(Var, Var),
    SelectPerRow { input: Var, cols: Vec<usize> },
    SelectRows { input: Var, rows: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// The discrete choices of a forward pass: the permutation of every sort and
/// the sign pattern of every `abs`, in the order the ops were applied.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BranchLog {
    sorts: Vec<Vec<usize>>,
    signs: Vec<Vec<bool>>,
}

impl BranchLog {
    pub fn is_empty(&self) -> bool {
        self.sorts.is_empty() && self.signs.is_empty()
    }
}

#[derive(Debug, Default)]
struct Replay {
    log: BranchLog,
    next_sort: usize,
    next_sign: usize,
}

/// A single-threaded computation graph.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    replay: Option<Replay>,
}

fn last_dim(shape: &[usize]) -> usize {
    shape.last().copied().unwrap_or(1)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph whose sorts and `abs` reuse the decisions in `log` instead of
    /// looking at their inputs, so the forward pass stays on one smooth piece.
    pub fn replaying(log: BranchLog) -> Self {
        Graph {
            nodes: Vec::new(),
            replay: Some(Replay {
                log,
                ..Default::default()
            }),
        }
    }

    /// Decisions taken so far, in op order.
    pub fn branch_log(&self) -> BranchLog {
        let mut log = BranchLog::default();
        for node in &self.nodes {
            match &node.op {
                Op::SortDesc { perm, .. } => log.sorts.push(perm.clone()),
                Op::Abs(a) => log
                    .signs
                    .push(self.value(*a).data().iter().map(|&x| x >= 0.0).collect()),
                _ => {}
            }
        }
        log
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, op: Op, value: Tensor, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    // ---- leaves -------------------------------------------------------

    /// Input that receives gradients but is not tied to a parameter.
    pub fn input(&mut self, t: Tensor) -> Result<Var> {
        self.push(Op::Leaf, t, "input")
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        self.push(Op::Param(id), store.value(id).clone(), "param")
    }

    /// Looks up rows of a 2-D parameter; gradients scatter back into those rows.
    pub fn gather_rows(&mut self, store: &ParamStore, id: ParamId, rows: &[usize]) -> Result<Var> {
        let table = store.value(id);
        if table.rank() != 2 {
            return Err(Error::shape("gather_rows", table.shape(), &[rows.len()]));
        }
        let (n, cols) = (table.shape()[0], table.shape()[1]);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            if r >= n {
                return Err(Error::IndexOutOfRange {
                    what: "embedding table",
                    index: r,
                    size: n,
                });
            }
            data.extend_from_slice(table.row_slice(r));
        }
        let value = Tensor::new(vec![rows.len(), cols], data)?;
        self.push(
            Op::Gather {
                param: id,
                rows: rows.to_vec(),
            },
            value,
            "gather_rows",
        )
    }

    // ---- elementwise --------------------------------------------------

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (x, y) = (self.value(a), self.value(b));
        let data = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(&p, &q)| f(p, q))
            .collect();
        Tensor::new(x.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip_with(a, b, |p, q| p + q);
        self.push(Op::Add(a, b), v, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_with(a, b, |p, q| p - q);
        self.push(Op::Sub(a, b), v, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("elementwise_mul", a, b)?;
        let v = self.zip_with(a, b, |p, q| p * q);
        self.push(Op::Mul(a, b), v, "elementwise_mul")
    }

    /// Sum of several same-shaped nodes, left to right.
    pub fn add_all(&mut self, vars: &[Var]) -> Result<Var> {
        let (&first, rest) = vars
            .split_first()
            .ok_or_else(|| Error::InvalidArgument("add_all of nothing".into()))?;
        rest.iter().try_fold(first, |acc, &v| self.add(acc, v))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x * c);
        self.push(Op::Scale(a, c), v, "scale")
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x + c);
        self.push(Op::AddScalar(a), v, "add_scalar")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), v, "sigmoid")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), v, "tanh")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::exp);
        self.push(Op::Exp(a), v, "exp")
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&x| x <= 0.0) {
            return Err(Error::ZeroNorm { op: "log" });
        }
        let v = self.value(a).map(f64::ln);
        self.push(Op::Log(a), v, "log")
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let v = match self.replay.as_mut() {
            None => self.value(a).map(f64::abs),
            Some(r) => {
                let signs = r.log.signs.get(r.next_sign).ok_or(Error::Replay("abs"))?;
                r.next_sign += 1;
                let t = &self.nodes[a.0].value;
                if signs.len() != t.len() {
                    return Err(Error::Replay("abs"));
                }
                let data = t
                    .data()
                    .iter()
                    .zip(signs)
                    .map(|(&x, &pos)| if pos { x } else { -x })
                    .collect();
                Tensor::new(t.shape().to_vec(), data)?
            }
        };
        self.push(Op::Abs(a), v, "abs")
    }

    pub fn powi(&mut self, a: Var, k: i32) -> Result<Var> {
        let v = self.value(a).map(|x| x.powi(k));
        self.push(Op::Powi(a, k), v, "powi")
    }

    // ---- linear algebra and layout -----------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let v = Tensor::new(vec![m, n], out)?;
        self.push(Op::MatMul(a, b), v, "matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(Error::shape("transpose", s, &[]));
        }
        let v = transpose_raw(self.value(a));
        self.push(Op::Transpose(a), v, "transpose")
    }

    /// Concatenates same-rank tensors along `axis`.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", &base, &[axis]));
        }
        let mut axis_total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
            axis_total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * axis_total * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let block = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = base;
        shape[axis] = axis_total;
        let v = Tensor::new(shape, data)?;
        self.push(
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            v,
            "concat",
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshaped(shape.to_vec())?;
        self.push(Op::Reshape(a), v, "reshape")
    }

    /// Repeats a `[1, D]` row `rows` times.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 || s[0] != 1 {
            return Err(Error::shape("broadcast_rows", s, &[1, last_dim(s)]));
        }
        let d = s[1];
        let row = self.value(a).data().to_vec();
        let data = (0..rows).flat_map(|_| row.iter().copied()).collect();
        let v = Tensor::new(vec![rows, d], data)?;
        self.push(Op::BroadcastRows(a), v, "broadcast_rows")
    }

    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let s = t.shape();
        if s.is_empty() {
            return Err(Error::shape("select_rows", s, &[]));
        }
        let block: usize = s[1..].iter().product();
        let mut data = Vec::with_capacity(rows.len() * block);
        for &r in rows {
            if r >= s[0] {
                return Err(Error::IndexOutOfRange {
                    what: "select_rows",
                    index: r,
                    size: s[0],
                });
            }
            data.extend_from_slice(&t.data()[r * block..(r + 1) * block]);
        }
        let mut shape = s.to_vec();
        shape[0] = rows.len();
        let v = Tensor::new(shape, data)?;
        self.push(
            Op::SelectRows {
                input: a,
                rows: rows.to_vec(),
            },
            v,
            "select_rows",
        )
    }

    /// Picks one column per row of a `[B, C]` matrix, giving `[B]`.
    pub fn select_per_row(&mut self, a: Var, cols: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let s = t.shape();
        if s.len() != 2 || s[0] != cols.len() {
            return Err(Error::shape("select_per_row", s, &[cols.len()]));
        }
        let mut data = Vec::with_capacity(cols.len());
        for (i, &c) in cols.iter().enumerate() {
            if c >= s[1] {
                return Err(Error::IndexOutOfRange {
                    what: "select_per_row",
                    index: c,
                    size: s[1],
                });
            }
            data.push(t.data()[i * s[1] + c]);
        }
        let v = Tensor::vector(data);
        self.push(
            Op::SelectPerRow {
                input: a,
                cols: cols.to_vec(),
            },
            v,
            "select_per_row",
        )
    }

    // ---- row-wise nonlinear maps ------------------------------------------

    /// Softmax along the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let mut out = t.clone();
        for row in out.data_mut().chunks_exact_mut(last_dim(t.shape()).max(1)) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for x in row.iter_mut() {
                *x = (*x - m).exp();
                z += *x;
            }
            row.iter_mut().for_each(|x| *x /= z);
        }
        self.push(Op::Softmax(a), out, "softmax")
    }

    /// Log-softmax along the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let mut out = t.clone();
        for row in out.data_mut().chunks_exact_mut(last_dim(t.shape()).max(1)) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|x| *x -= lse);
        }
        self.push(Op::LogSoftmax(a), out, "log_softmax")
    }

    /// Scales each row (last axis) to unit L2 norm.
    pub fn l2_normalize(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let mut out = t.clone();
        for row in out.data_mut().chunks_exact_mut(last_dim(t.shape()).max(1)) {
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n == 0.0 {
                return Err(Error::ZeroNorm { op: "l2_normalize" });
            }
            row.iter_mut().for_each(|x| *x /= n);
        }
        self.push(Op::L2Normalize(a), out, "l2_normalize")
    }

    // ---- reductions ----------------------------------------------------

    /// Euclidean norm of all entries. The subgradient at zero is zero.
    pub fn norm2(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).l2_norm();
        self.push(Op::Norm2(a), Tensor::scalar(n), "norm2")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::InvalidArgument("mean of empty tensor".into()));
        }
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Op::Mean(a), Tensor::scalar(s), "mean")
    }

    /// Sums out the last axis.
    pub fn sum_last(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let s = t.shape();
        if s.is_empty() {
            return Err(Error::shape("sum_last", s, &[]));
        }
        let data = t.rows().map(|r| r.iter().sum()).collect();
        let v = Tensor::new(s[..s.len() - 1].to_vec(), data)?;
        self.push(Op::SumLast(a), v, "sum_last")
    }

    /// Mean over the rows of a `[B, D]` matrix, keeping a `[1, D]` shape.
    pub fn mean_axis0(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let s = t.shape();
        if s.len() != 2 || s[0] == 0 {
            return Err(Error::shape("mean_axis0", s, &[]));
        }
        let (b, d) = (s[0], s[1]);
        let mut out = vec![0.0; d];
        for row in t.rows() {
            for (o, x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        out.iter_mut().for_each(|o| *o /= b as f64);
        let v = Tensor::new(vec![1, d], out)?;
        self.push(Op::MeanAxis0(a), v, "mean_axis0")
    }

    pub fn frobenius_sq(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().map(|x| x * x).sum();
        self.push(Op::FrobeniusSq(a), Tensor::scalar(s), "frobenius_sq")
    }

    // ---- pooling ---------------------------------------------------------

    /// Sorts each dimension (last axis) of the `n` feature vectors stacked on
    /// the second-to-last axis in descending order. Ties keep their input
    /// order; gradients follow the permutation chosen here.
    pub fn sort_desc_per_dimension(&mut self, a: Var) -> Result<Var> {
        let recorded = match self.replay.as_mut() {
            Some(r) => {
                let p = r.log.sorts.get(r.next_sort).ok_or(Error::Replay("sort"))?;
                r.next_sort += 1;
                Some(p.clone())
            }
            None => None,
        };
        let t = self.value(a);
        let s = t.shape();
        if s.len() < 2 {
            return Err(Error::shape("sort_desc_per_dimension", s, &[]));
        }
        let (n, d) = (s[s.len() - 2], s[s.len() - 1]);
        let batches = t.len() / (n * d).max(1);
        let src = t.data();
        let mut out = vec![0.0; t.len()];
        let perm = match recorded {
            Some(perm) => {
                if perm.len() != t.len() || perm.iter().any(|&p| p >= t.len()) {
                    return Err(Error::Replay("sort"));
                }
                for (o, &p) in out.iter_mut().zip(&perm) {
                    *o = src[p];
                }
                perm
            }
            None => {
                let mut perm = vec![0usize; t.len()];
                let mut order: Vec<usize> = Vec::with_capacity(n);
                for b in 0..batches {
                    let base = b * n * d;
                    for col in 0..d {
                        order.clear();
                        order.extend(0..n);
                        order.sort_by(|&i, &j| {
                            src[base + j * d + col]
                                .partial_cmp(&src[base + i * d + col])
                                .unwrap_or(Ordering::Equal)
                        });
                        for (pos, &from) in order.iter().enumerate() {
                            out[base + pos * d + col] = src[base + from * d + col];
                            perm[base + pos * d + col] = base + from * d + col;
                        }
                    }
                }
                perm
            }
        };
        let v = Tensor::new(s.to_vec(), out)?;
        self.push(
            Op::SortDesc { input: a, perm },
            v,
            "sort_desc_per_dimension",
        )
    }

    /// `out[.., d] = Σ_i w[i] · x[.., i, d]` for `x` of shape `[.., n, D]`
    /// and `w` of `n` elements.
    pub fn weighted_positions(&mut self, x: Var, w: Var) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() < 2 || self.value(w).len() != sx[sx.len() - 2] {
            return Err(Error::shape("weighted_positions", sx, sw));
        }
        let (n, d) = (sx[sx.len() - 2], sx[sx.len() - 1]);
        let xs = self.value(x).data();
        let ws = self.value(w).data();
        let batches = xs.len() / (n * d).max(1);
        let mut out = vec![0.0; batches * d];
        for b in 0..batches {
            let o = &mut out[b * d..(b + 1) * d];
            for (i, &wi) in ws.iter().enumerate() {
                let row = &xs[(b * n + i) * d..(b * n + i + 1) * d];
                for (acc, v) in o.iter_mut().zip(row) {
                    *acc += wi * v;
                }
            }
        }
        let mut shape = sx[..sx.len() - 2].to_vec();
        shape.push(d);
        let v = Tensor::new(shape, out)?;
        self.push(Op::WeightedPositions(x, w), v, "weighted_positions")
    }

    // ---- backward --------------------------------------------------------

    /// Gradients of the single-element node `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape("backward", self.shape(loss), &[]));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(self.shape(loss), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, op: &Op, y: &Tensor, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |v: Var, t: Tensor| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        let unary = |x: &Tensor, f: &dyn Fn(f64, f64, f64) -> f64| -> Tensor {
            let data = x
                .data()
                .iter()
                .zip(y.data())
                .zip(g.data())
                .map(|((&xv, &yv), &gv)| f(xv, yv, gv))
                .collect();
            Tensor::new(x.shape().to_vec(), data).expect("shape")
        };
        match op {
            Op::Leaf | Op::Param(_) | Op::Gather { .. } => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let ga = unary(vb, &|q, _, gv| gv * q);
                let gb = unary(va, &|p, _, gv| gv * p);
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::Scale(a, c) => acc(*a, g.map(|v| v * c)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                // dA = G · Bᵀ, dB = Aᵀ · G
                let bt = transpose_raw(vb);
                let at = transpose_raw(va);
                let ga = matmul_raw(g.data(), bt.data(), m, n, k);
                let gb = matmul_raw(at.data(), g.data(), k, m, n);
                acc(*a, Tensor::new(vec![m, k], ga).expect("shape"));
                acc(*b, Tensor::new(vec![k, n], gb).expect("shape"));
            }
            Op::Transpose(a) => acc(*a, transpose_raw(g)),
            Op::Concat { inputs, axis } => {
                let shape = y.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let mut parts: Vec<Vec<f64>> = inputs
                    .iter()
                    .map(|v| Vec::with_capacity(self.value(*v).len()))
                    .collect();
                let mut offset = 0;
                for _ in 0..outer {
                    for (p, v) in parts.iter_mut().zip(inputs) {
                        let block = self.shape(*v)[*axis] * inner;
                        p.extend_from_slice(&g.data()[offset..offset + block]);
                        offset += block;
                    }
                }
                for (p, v) in parts.into_iter().zip(inputs) {
                    acc(*v, Tensor::new(self.shape(*v).to_vec(), p).expect("shape"));
                }
            }
            Op::Reshape(a) => {
                let t = g.clone().reshaped(self.shape(*a).to_vec()).expect("shape");
                acc(*a, t);
            }
            Op::BroadcastRows(a) => {
                let d = self.shape(*a)[1];
                let mut out = vec![0.0; d];
                for row in g.rows() {
                    for (o, v) in out.iter_mut().zip(row) {
                        *o += v;
                    }
                }
                acc(*a, Tensor::new(vec![1, d], out).expect("shape"));
            }
            Op::SelectRows { input, rows } => {
                let s = self.shape(*input);
                let block: usize = s[1..].iter().product();
                let mut out = Tensor::zeros(s);
                for (k, &r) in rows.iter().enumerate() {
                    let dst = &mut out.data_mut()[r * block..(r + 1) * block];
                    for (d, v) in dst.iter_mut().zip(&g.data()[k * block..(k + 1) * block]) {
                        *d += v;
                    }
                }
                acc(*input, out);
            }
            Op::SelectPerRow { input, cols } => {
                let s = self.shape(*input);
                let mut out = Tensor::zeros(s);
                for (i, &c) in cols.iter().enumerate() {
                    out.data_mut()[i * s[1] + c] += g.data()[i];
                }
                acc(*input, out);
            }
            Op::Sigmoid(a) => acc(*a, unary(self.value(*a), &|_, yv, gv| gv * yv * (1.0 - yv))),
            Op::Tanh(a) => acc(*a, unary(self.value(*a), &|_, yv, gv| gv * (1.0 - yv * yv))),
            Op::Exp(a) => acc(*a, unary(self.value(*a), &|_, yv, gv| gv * yv)),
            Op::Log(a) => acc(*a, unary(self.value(*a), &|xv, _, gv| gv / xv)),
            Op::Abs(a) => acc(*a, unary(self.value(*a), &|xv, _, gv| gv * sign(xv))),
            Op::Powi(a, k) => {
                let k = *k;
                acc(
                    *a,
                    unary(self.value(*a), &|xv, _, gv| {
                        gv * f64::from(k) * xv.powi(k - 1)
                    }),
                )
            }
            Op::Softmax(a) => {
                let d = last_dim(y.shape()).max(1);
                let mut out = Vec::with_capacity(y.len());
                for (yr, gr) in y.data().chunks_exact(d).zip(g.data().chunks_exact(d)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    out.extend(yr.iter().zip(gr).map(|(p, q)| p * (q - dot)));
                }
                acc(*a, Tensor::new(y.shape().to_vec(), out).expect("shape"));
            }
            Op::LogSoftmax(a) => {
                let d = last_dim(y.shape()).max(1);
                let mut out = Vec::with_capacity(y.len());
                for (yr, gr) in y.data().chunks_exact(d).zip(g.data().chunks_exact(d)) {
                    let total: f64 = gr.iter().sum();
                    out.extend(yr.iter().zip(gr).map(|(p, q)| q - p.exp() * total));
                }
                acc(*a, Tensor::new(y.shape().to_vec(), out).expect("shape"));
            }
            Op::L2Normalize(a) => {
                let x = self.value(*a);
                let d = last_dim(y.shape()).max(1);
                let mut out = Vec::with_capacity(y.len());
                for ((xr, yr), gr) in x
                    .data()
                    .chunks_exact(d)
                    .zip(y.data().chunks_exact(d))
                    .zip(g.data().chunks_exact(d))
                {
                    let n = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    out.extend(yr.iter().zip(gr).map(|(p, q)| (q - p * dot) / n));
                }
                acc(*a, Tensor::new(y.shape().to_vec(), out).expect("shape"));
            }
            Op::Norm2(a) => {
                let n = y.item();
                let gv = g.item();
                let x = self.value(*a);
                let t = if n == 0.0 {
                    Tensor::zeros(x.shape())
                } else {
                    x.map(|v| gv * v / n)
                };
                acc(*a, t);
            }
            Op::Sum(a) => acc(*a, Tensor::filled(self.shape(*a), g.item())),
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                acc(*a, Tensor::filled(self.shape(*a), g.item() / n));
            }
            Op::SumLast(a) => {
                let s = self.shape(*a);
                let d = last_dim(s);
                let data = g
                    .data()
                    .iter()
                    .flat_map(|&v| std::iter::repeat_n(v, d))
                    .collect();
                acc(*a, Tensor::new(s.to_vec(), data).expect("shape"));
            }
            Op::MeanAxis0(a) => {
                let s = self.shape(*a);
                let b = s[0] as f64;
                let row: Vec<f64> = g.data().iter().map(|v| v / b).collect();
                let data = (0..s[0]).flat_map(|_| row.iter().copied()).collect();
                acc(*a, Tensor::new(s.to_vec(), data).expect("shape"));
            }
            Op::FrobeniusSq(a) => {
                let gv = g.item();
                acc(*a, self.value(*a).map(|v| 2.0 * gv * v));
            }
            Op::SortDesc { input, perm } => {
                let mut out = Tensor::zeros(self.shape(*input));
                for (gv, &p) in g.data().iter().zip(perm) {
                    out.data_mut()[p] += gv;
                }
                acc(*input, out);
            }
            Op::WeightedPositions(x, w) => {
                let sx = self.shape(*x);
                let (n, d) = (sx[sx.len() - 2], sx[sx.len() - 1]);
                let xs = self.value(*x).data();
                let ws = self.value(*w).data();
                let batches = xs.len() / (n * d).max(1);
                let mut gx = vec![0.0; xs.len()];
                let mut gw = vec![0.0; n];
                for b in 0..batches {
                    let gr = &g.data()[b * d..(b + 1) * d];
                    for i in 0..n {
                        let off = (b * n + i) * d;
                        let mut dot = 0.0;
                        for k in 0..d {
                            gx[off + k] = ws[i] * gr[k];
                            dot += xs[off + k] * gr[k];
                        }
                        gw[i] += dot;
                    }
                }
                acc(*x, Tensor::new(sx.to_vec(), gx).expect("shape"));
                acc(*w, Tensor::new(self.shape(*w).to_vec(), gw).expect("shape"));
            }
        }
    }
}

/// Per-node gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Adds parameter gradients (including scattered row lookups) into `store`.
    pub fn accumulate_into(&self, graph: &Graph, store: &mut ParamStore) {
        for (node, grad) in graph.nodes.iter().zip(&self.grads) {
            let Some(grad) = grad else { continue };
            match &node.op {
                Op::Param(id) => store.get_mut(*id).grad.add_assign(grad),
                Op::Gather { param, rows } => {
                    let target = &mut store.get_mut(*param).grad;
                    for (k, &r) in rows.iter().enumerate() {
                        for (t, v) in target.row_slice_mut(r).iter_mut().zip(grad.row_slice(k)) {
                            *t += v;
                        }
                    }
                }
                _ => {}
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(t: &Tensor) -> Tensor {
    let (r, c) = (t.shape()[0], t.shape()[1]);
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = t.data()[i * c + j];
        }
    }
    Tensor::new(vec![c, r], out).expect("shape")
}
