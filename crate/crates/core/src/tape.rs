//! Reverse-mode differentiation over dense matrices.
//!
//! Every primitive evaluates eagerly and appends a record to the [`Tape`].
//! [`Tape::backward`] walks the records in reverse and accumulates gradients
//! additively, so a value consumed twice receives both contributions.
//! Parameter leaves forward their gradient into a [`Gradients`] buffer.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Gradients, ParamId, ParameterStore, Result, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    Embed { table: ParamId, rows: Vec<usize> },
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ConcatCols(Vec<Var>),
    SliceCols { src: Var, start: usize },
    SliceRows { src: Var, start: usize },
    PoolRows { src: Var, groups: Vec<Vec<usize>> },
    MaxPoolRows { src: Var, argmax: Vec<usize> },
    WindowMean { src: Var, radius: usize },
    IndexAdd { base: Var, src: Var, pairs: Vec<(usize, usize)> },
    OuterSum(Var, Var),
    Sigmoid(Var),
    LeakyRelu(Var, f64),
    Elu(Var),
    MaskedSoftmax(Var),
    CrossEntropy { logits: Var, target: usize, probs: Vec<f64> },
    Bce { prob: Var, label: f64 },
    BceWithLogits { logit: Var, label: f64 },
    Sum(Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn dim_err(op: &'static str, detail: alloc::string::String) -> Error {
    Error::Dimension { op, detail }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

#[cfg(test)]
std::thread_local! {
    pub(crate) static CORRUPT_ELU_BACKWARD: core::cell::Cell<bool> = const { core::cell::Cell::new(false) };
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

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar(&self, v: Var) -> Result<f64> {
        self.value(v).to_scalar()
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push("constant", value, Op::Constant)
    }

    pub fn param(&mut self, store: &ParameterStore, id: ParamId) -> Result<Var> {
        self.push("param", store.get(id).clone(), Op::Param(id))
    }

    /// Gathers rows of a parameter matrix without copying the rest of it.
    pub fn embed(&mut self, store: &ParameterStore, table: ParamId, rows: &[usize]) -> Result<Var> {
        let t = store.get(table);
        let mut out = Tensor::zeros(rows.len(), t.cols());
        for (i, &r) in rows.iter().enumerate() {
            if r >= t.rows() {
                return Err(dim_err("embed", format!("row {} of {}", r, t.rows())));
            }
            out.row_mut(i).copy_from_slice(t.row(r));
        }
        self.push("embed", out, Op::Embed { table, rows: rows.to_vec() })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.rows() {
            return Err(dim_err("matmul", format!("{:?} x {:?}", x.shape(), y.shape())));
        }
        let out = matmul(x, y);
        self.push("matmul", out, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose();
        self.push("transpose", out, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(dim_err("add", format!("{:?} + {:?}", x.shape(), y.shape())));
        }
        let mut out = x.clone();
        out.add_assign(y);
        self.push("add", out, Op::Add(a, b))
    }

    /// Adds a `1 × c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (x, b) = (self.value(a), self.value(row));
        if b.rows() != 1 || b.cols() != x.cols() {
            return Err(dim_err("add_row", format!("{:?} + {:?}", x.shape(), b.shape())));
        }
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (v, bias) in out.row_mut(r).iter_mut().zip(b.data()) {
                *v += bias;
            }
        }
        self.push("add_row", out, Op::AddRow(a, row))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(dim_err("mul", format!("{:?} * {:?}", x.shape(), y.shape())));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let out = Tensor::from_vec(x.rows(), x.cols(), data)?;
        self.push("mul", out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let x = self.value(a);
        let data = x.data().iter().map(|v| v * factor).collect();
        let out = Tensor::from_vec(x.rows(), x.cols(), data)?;
        self.push("scale", out, Op::Scale(a, factor))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = match parts.first() {
            Some(&p) => self.value(p).rows(),
            None => return Err(dim_err("concat_cols", "no inputs".into())),
        };
        let mut cols = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(dim_err("concat_cols", format!("{} rows vs {}", t.rows(), rows)));
            }
            cols += t.cols();
        }
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let t = self.value(p);
                out.row_mut(r)[offset..offset + t.cols()].copy_from_slice(t.row(r));
                offset += t.cols();
            }
        }
        self.push("concat_cols", out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        if start + len > x.cols() {
            return Err(dim_err("slice_cols", format!("{}..{} of {}", start, start + len, x.cols())));
        }
        let mut out = Tensor::zeros(x.rows(), len);
        for r in 0..x.rows() {
            out.row_mut(r).copy_from_slice(&x.row(r)[start..start + len]);
        }
        self.push("slice_cols", out, Op::SliceCols { src: a, start })
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        if start + len > x.rows() {
            return Err(dim_err("slice_rows", format!("{}..{} of {}", start, start + len, x.rows())));
        }
        let c = x.cols();
        let out = Tensor::from_vec(len, c, x.data()[start * c..(start + len) * c].to_vec())?;
        self.push("slice_rows", out, Op::SliceRows { src: a, start })
    }

    /// One output row per group: the mean of the listed input rows.
    pub fn pool_rows(&mut self, a: Var, groups: &[Vec<usize>]) -> Result<Var> {
        let x = self.value(a);
        let mut out = Tensor::zeros(groups.len(), x.cols());
        for (g, rows) in groups.iter().enumerate() {
            if rows.is_empty() {
                return Err(Error::EmptyInterval { op: "pool_rows" });
            }
            let inv = 1.0 / rows.len() as f64;
            for &r in rows {
                if r >= x.rows() {
                    return Err(dim_err("pool_rows", format!("row {} of {}", r, x.rows())));
                }
                for (o, v) in out.row_mut(g).iter_mut().zip(x.row(r)) {
                    *o += v * inv;
                }
            }
        }
        self.push("pool_rows", out, Op::PoolRows { src: a, groups: groups.to_vec() })
    }

    /// Column-wise maximum over rows `start..end`, as a `1 × c` row.
    /// Ties resolve to the earliest row.
    pub fn max_pool_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let x = self.value(a);
        if start >= end {
            return Err(Error::EmptyInterval { op: "max_pool_rows" });
        }
        if end > x.rows() {
            return Err(dim_err("max_pool_rows", format!("{}..{} of {}", start, end, x.rows())));
        }
        let mut out = Tensor::zeros(1, x.cols());
        let mut argmax = vec![start; x.cols()];
        for c in 0..x.cols() {
            let mut best = x.get(start, c);
            for r in start + 1..end {
                let v = x.get(r, c);
                if v > best {
                    best = v;
                    argmax[c] = r;
                }
            }
            out.set(0, c, best);
        }
        self.push("max_pool_rows", out, Op::MaxPoolRows { src: a, argmax })
    }

    /// Mean over the rows `i - radius ..= i + radius` clipped to the matrix.
    pub fn window_mean(&mut self, a: Var, radius: usize) -> Result<Var> {
        let x = self.value(a);
        let n = x.rows();
        let mut out = Tensor::zeros(n, x.cols());
        for i in 0..n {
            let (lo, hi) = (i.saturating_sub(radius), (i + radius).min(n.saturating_sub(1)));
            let inv = 1.0 / (hi - lo + 1) as f64;
            for r in lo..=hi {
                for (o, v) in out.row_mut(i).iter_mut().zip(x.row(r)) {
                    *o += v * inv;
                }
            }
        }
        self.push("window_mean", out, Op::WindowMean { src: a, radius })
    }

    /// `base` with `src[s]` added onto row `d` for every `(s, d)` pair.
    pub fn index_add(&mut self, base: Var, src: Var, pairs: &[(usize, usize)]) -> Result<Var> {
        let (b, s) = (self.value(base), self.value(src));
        if b.cols() != s.cols() {
            return Err(dim_err("index_add", format!("{:?} vs {:?}", b.shape(), s.shape())));
        }
        let mut out = b.clone();
        for &(from, to) in pairs {
            if from >= s.rows() || to >= b.rows() {
                return Err(dim_err("index_add", format!("pair ({from}, {to}) out of range")));
            }
            for (o, v) in out.row_mut(to).iter_mut().zip(s.row(from)) {
                *o += v;
            }
        }
        self.push("index_add", out, Op::IndexAdd { base, src, pairs: pairs.to_vec() })
    }

    /// `out[m][n] = u[m] + v[n]` for column vectors `u`, `v`.
    pub fn outer_sum(&mut self, u: Var, v: Var) -> Result<Var> {
        let (a, b) = (self.value(u), self.value(v));
        if a.cols() != 1 || b.cols() != 1 {
            return Err(dim_err("outer_sum", format!("{:?}, {:?}", a.shape(), b.shape())));
        }
        let mut out = Tensor::zeros(a.rows(), b.rows());
        for m in 0..a.rows() {
            for n in 0..b.rows() {
                out.set(m, n, a.get(m, 0) + b.get(n, 0));
            }
        }
        self.push("outer_sum", out, Op::OuterSum(u, v))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let data = x.data().iter().map(|&v| sigmoid(v)).collect();
        let out = Tensor::from_vec(x.rows(), x.cols(), data)?;
        self.push("sigmoid", out, Op::Sigmoid(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        let x = self.value(a);
        let data = x.data().iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect();
        let out = Tensor::from_vec(x.rows(), x.cols(), data)?;
        self.push("leaky_relu", out, Op::LeakyRelu(a, slope))
    }

    /// ELU with unit scale.
    pub fn elu(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let data = x
            .data()
            .iter()
            .map(|&v| if v > 0.0 { v } else { libm::expm1(v) })
            .collect();
        let out = Tensor::from_vec(x.rows(), x.cols(), data)?;
        self.push("elu", out, Op::Elu(a))
    }

    /// Row-wise softmax over the entries where `mask` is `true`; masked
    /// entries are exactly zero. `mask` is row-major with the shape of `a`.
    pub fn masked_softmax(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let x = self.value(a);
        if mask.len() != x.len() {
            return Err(dim_err("masked_softmax", format!("mask {} for {:?}", mask.len(), x.shape())));
        }
        let c = x.cols();
        let mut out = Tensor::zeros(x.rows(), c);
        for r in 0..x.rows() {
            let m = &mask[r * c..(r + 1) * c];
            let row = x.row(r);
            let max = row
                .iter()
                .zip(m)
                .filter(|(_, &keep)| keep)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(dim_err("masked_softmax", format!("row {r} has no unmasked entries")));
            }
            let mut total = 0.0;
            for j in 0..c {
                if m[j] {
                    let e = libm::exp(row[j] - max);
                    out.set(r, j, e);
                    total += e;
                }
            }
            for v in out.row_mut(r) {
                *v /= total;
            }
        }
        self.push("masked_softmax", out, Op::MaskedSoftmax(a))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let mask = vec![true; self.value(a).len()];
        self.masked_softmax(a, &mask)
    }

    /// `-log softmax(logits)[target]` for a `1 × L` row of logits.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let x = self.value(logits);
        if x.rows() != 1 || target >= x.cols() {
            return Err(dim_err("cross_entropy", format!("target {} for {:?}", target, x.shape())));
        }
        let max = x.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = x.data().iter().map(|&v| libm::exp(v - max)).collect();
        let total: f64 = exps.iter().sum();
        let loss = libm::log(total) + max - x.data()[target];
        let probs = exps.iter().map(|e| e / total).collect();
        self.push(
            "cross_entropy",
            Tensor::scalar(loss),
            Op::CrossEntropy { logits, target, probs },
        )
    }

    /// Binary cross-entropy on a probability (`1 × 1`).
    pub fn bce(&mut self, prob: Var, label: f64) -> Result<Var> {
        let p = self.value(prob).to_scalar()?;
        let loss = -(label * libm::log(p) + (1.0 - label) * libm::log(1.0 - p));
        self.push("bce", Tensor::scalar(loss), Op::Bce { prob, label })
    }

    /// Binary cross-entropy of `sigmoid(logit)`, evaluated stably.
    pub fn bce_with_logits(&mut self, logit: Var, label: f64) -> Result<Var> {
        let z = self.value(logit).to_scalar()?;
        let loss = z.max(0.0) - z * label + libm::log1p(libm::exp(-libm::fabs(z)));
        self.push("bce_with_logits", Tensor::scalar(loss), Op::BceWithLogits { logit, label })
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let total = self.value(a).data().iter().sum();
        self.push("sum", Tensor::scalar(total), Op::Sum(a))
    }

    /// Sum of several scalars.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        let (&first, rest) = terms
            .split_first()
            .ok_or_else(|| dim_err("add_all", "no terms".into()))?;
        let mut acc = first;
        for &t in rest {
            acc = self.add(acc, t)?;
        }
        Ok(acc)
    }

    /// Back-propagates from the scalar `loss` and accumulates parameter
    /// gradients into `grads`.
    pub fn backward(&self, loss: Var, grads: &mut Gradients) -> Result<()> {
        if self.shape(loss) != [1, 1] {
            return Err(dim_err("backward", format!("loss shape {:?}", self.shape(loss))));
        }
        let mut adj: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => grads.accumulate(*id, &g)?,
                Op::Embed { table, rows } => grads.accumulate_rows(*table, rows, &g)?,
                Op::MatMul(a, b) => {
                    let (x, y) = (self.value(*a), self.value(*b));
                    let ga = matmul(&g, &y.transpose());
                    let gb = matmul(&x.transpose(), &g);
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *b, gb);
                }
                Op::Transpose(a) => accumulate(&mut adj, *a, g.transpose()),
                Op::Add(a, b) => {
                    accumulate(&mut adj, *b, g.clone());
                    accumulate(&mut adj, *a, g);
                }
                Op::AddRow(a, row) => {
                    let mut gr = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (acc, v) in gr.data_mut().iter_mut().zip(g.row(r)) {
                            *acc += v;
                        }
                    }
                    accumulate(&mut adj, *row, gr);
                    accumulate(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    let (x, y) = (self.value(*a), self.value(*b));
                    let ga = zip_map(&g, y, |p, q| p * q);
                    let gb = zip_map(&g, x, |p, q| p * q);
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *b, gb);
                }
                Op::Scale(a, f) => accumulate(&mut adj, *a, map(&g, |v| v * f)),
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        let mut gp = Tensor::zeros(g.rows(), w);
                        for r in 0..g.rows() {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + w]);
                        }
                        offset += w;
                        accumulate(&mut adj, p, gp);
                    }
                }
                Op::SliceCols { src, start } => {
                    let [r, c] = self.shape(*src);
                    let mut gs = Tensor::zeros(r, c);
                    for i in 0..r {
                        gs.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                    }
                    accumulate(&mut adj, *src, gs);
                }
                Op::SliceRows { src, start } => {
                    let [r, c] = self.shape(*src);
                    let mut gs = Tensor::zeros(r, c);
                    gs.data_mut()[start * c..(start + g.rows()) * c].copy_from_slice(g.data());
                    accumulate(&mut adj, *src, gs);
                }
                Op::PoolRows { src, groups } => {
                    let [r, c] = self.shape(*src);
                    let mut gs = Tensor::zeros(r, c);
                    for (gi, rows) in groups.iter().enumerate() {
                        let inv = 1.0 / rows.len() as f64;
                        for &row in rows {
                            for (o, v) in gs.row_mut(row).iter_mut().zip(g.row(gi)) {
                                *o += v * inv;
                            }
                        }
                    }
                    accumulate(&mut adj, *src, gs);
                }
                Op::MaxPoolRows { src, argmax } => {
                    let [r, c] = self.shape(*src);
                    let mut gs = Tensor::zeros(r, c);
                    for (col, &row) in argmax.iter().enumerate() {
                        gs.set(row, col, g.get(0, col));
                    }
                    accumulate(&mut adj, *src, gs);
                }
                Op::WindowMean { src, radius } => {
                    let [n, c] = self.shape(*src);
                    let mut gs = Tensor::zeros(n, c);
                    for i in 0..n {
                        let (lo, hi) = (i.saturating_sub(*radius), (i + radius).min(n - 1));
                        let inv = 1.0 / (hi - lo + 1) as f64;
                        for r in lo..=hi {
                            for (o, v) in gs.row_mut(r).iter_mut().zip(g.row(i)) {
                                *o += v * inv;
                            }
                        }
                    }
                    accumulate(&mut adj, *src, gs);
                }
                Op::IndexAdd { base, src, pairs } => {
                    let [r, c] = self.shape(*src);
                    let mut gs = Tensor::zeros(r, c);
                    for &(from, to) in pairs {
                        for (o, v) in gs.row_mut(from).iter_mut().zip(g.row(to)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut adj, *src, gs);
                    accumulate(&mut adj, *base, g);
                }
                Op::OuterSum(u, v) => {
                    let mut gu = Tensor::zeros(g.rows(), 1);
                    let mut gv = Tensor::zeros(g.cols(), 1);
                    for m in 0..g.rows() {
                        for n in 0..g.cols() {
                            let x = g.get(m, n);
                            gu.data_mut()[m] += x;
                            gv.data_mut()[n] += x;
                        }
                    }
                    accumulate(&mut adj, *u, gu);
                    accumulate(&mut adj, *v, gv);
                }
                Op::Sigmoid(a) => {
                    let ga = zip_map(&g, &node.value, |d, y| d * y * (1.0 - y));
                    accumulate(&mut adj, *a, ga);
                }
                Op::LeakyRelu(a, slope) => {
                    let x = self.value(*a);
                    let ga = zip_map(&g, x, |d, v| if v > 0.0 { d } else { d * slope });
                    accumulate(&mut adj, *a, ga);
                }
                Op::Elu(a) => {
                    let x = self.value(*a);
                    #[allow(unused_mut)]
                    let mut ga = zip_map(&g, x, |d, v| if v > 0.0 { d } else { d * libm::exp(v) });
                    #[cfg(test)]
                    if CORRUPT_ELU_BACKWARD.with(|c| c.get()) {
                        ga = map(&ga, |v| v * 1.5 + 0.01);
                    }
                    accumulate(&mut adj, *a, ga);
                }
                Op::MaskedSoftmax(a) => {
                    let y = &node.value;
                    let mut ga = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let dot: f64 = y.row(r).iter().zip(g.row(r)).map(|(p, q)| p * q).sum();
                        for j in 0..y.cols() {
                            ga.set(r, j, y.get(r, j) * (g.get(r, j) - dot));
                        }
                    }
                    accumulate(&mut adj, *a, ga);
                }
                Op::CrossEntropy { logits, target, probs } => {
                    let up = g.to_scalar()?;
                    let mut gl = Tensor::zeros(1, probs.len());
                    for (j, p) in probs.iter().enumerate() {
                        let onehot = if j == *target { 1.0 } else { 0.0 };
                        gl.set(0, j, up * (p - onehot));
                    }
                    accumulate(&mut adj, *logits, gl);
                }
                Op::Bce { prob, label } => {
                    let up = g.to_scalar()?;
                    let p = self.value(*prob).to_scalar()?;
                    let d = -label / p + (1.0 - label) / (1.0 - p);
                    accumulate(&mut adj, *prob, Tensor::scalar(up * d));
                }
                Op::BceWithLogits { logit, label } => {
                    let up = g.to_scalar()?;
                    let z = self.value(*logit).to_scalar()?;
                    accumulate(&mut adj, *logit, Tensor::scalar(up * (sigmoid(z) - label)));
                }
                Op::Sum(a) => {
                    let up = g.to_scalar()?;
                    let [r, c] = self.shape(*a);
                    accumulate(&mut adj, *a, Tensor::filled(r, c, up));
                }
            }
        }
        Ok(())
    }
}

fn accumulate(adj: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut adj[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = t.data().iter().map(|&v| f(v)).collect();
    Tensor::from_vec(t.rows(), t.cols(), data).expect("same shape")
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&p, &q)| f(p, q)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data).expect("same shape")
}

pub(crate) fn matmul(x: &Tensor, y: &Tensor) -> Tensor {
    let (n, k, m) = (x.rows(), x.cols(), y.cols());
    let mut out = Tensor::zeros(n, m);
    for i in 0..n {
        let xr = x.row(i);
        let orow = out.row_mut(i);
        for (p, &xv) in xr.iter().enumerate().take(k) {
            if xv == 0.0 {
                continue;
            }
            for (o, &yv) in orow.iter_mut().zip(y.row(p)) {
                *o += xv * yv;
            }
        }
    }
    out
}
