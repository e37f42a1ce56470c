//! The tape: a append-only graph of tensor ops with reverse-mode backward.

use std::sync::Arc;

use thiserror::Error;

use super::scalar::Scalar;
use crate::stablehash::{mix2, unit_f64};

/// Handle to a tensor on a tape. Only valid for the tape that created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

#[derive(Debug, Error, PartialEq)]
pub enum NumericsError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("{op}: expected a 2-d tensor, got shape {shape:?}")]
    NotMatrix { op: &'static str, shape: Vec<usize> },
    #[error("{op}: {detail}")]
    BadArgument { op: &'static str, detail: String },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    LossNotScalar { shape: Vec<usize> },
    #[error("tensor data length {len} does not match shape {shape:?}")]
    DataLengthMismatch { len: usize, shape: Vec<usize> },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
}

enum Storage<S> {
    Owned(Vec<S>),
    Shared(Arc<Vec<S>>),
}

impl<S> Storage<S> {
    fn as_slice(&self) -> &[S] {
        match self {
            Storage::Owned(v) => v,
            Storage::Shared(v) => v,
        }
    }
}

enum Op<S: Scalar> {
    Leaf,
    Add(TensorId, TensorId),
    /// Row-broadcast add: [n, d] + [d].
    AddBias(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Scale(TensorId, S),
    Matmul(TensorId, TensorId),
    Transpose(TensorId),
    SliceRows(TensorId, usize),
    ConcatRows(Vec<TensorId>),
    SliceCols(TensorId, usize),
    ConcatCols(Vec<TensorId>),
    Gelu(TensorId),
    LayerNorm { x: TensorId, gamma: TensorId, beta: TensorId, stats: Vec<(S, S)> },
    /// Row softmax where masked entries are excluded from the max and the
    /// denominator entirely, and come out exactly zero.
    SoftmaxMasked { x: TensorId, mask: Arc<Vec<bool>>, temperature: S },
    Embed { table: TensorId, ids: Vec<usize> },
    Dropout { x: TensorId, rate: f64, key: u64 },
    CrossEntropy { logits: TensorId, targets: Vec<usize>, ignore_id: usize, probs: Vec<S>, scored: usize },
    Sum(TensorId),
}

struct Node<S: Scalar> {
    shape: Vec<usize>,
    data: Storage<S>,
    requires_grad: bool,
    op: Op<S>,
}

/// Append-only op graph with buffered activations.
///
/// Build the forward pass through the op methods, call [`Tape::backward`] on
/// a scalar loss, then read gradients of leaf parameters with [`Tape::grad`].
pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
    grads: Vec<Option<Vec<S>>>,
    dropout_key: u64,
    dropout_sites: u64,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self::with_dropout_key(0)
    }

    /// `dropout_key` seeds every dropout mask on this tape; the trainer
    /// derives it from (run seed, step, sample slot) so masks are
    /// reproducible without storing them.
    pub fn with_dropout_key(dropout_key: u64) -> Self {
        Tape { nodes: Vec::new(), grads: Vec::new(), dropout_key, dropout_sites: 0 }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, data: Storage<S>, requires_grad: bool, op: Op<S>) -> TensorId {
        self.nodes.push(Node { shape, data, requires_grad, op });
        TensorId(self.nodes.len() - 1)
    }

    fn requires(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn data(&self, id: TensorId) -> &[S] {
        self.nodes[id.0].data.as_slice()
    }

    /// Value of a single-element tensor.
    pub fn scalar_value(&self, id: TensorId) -> S {
        debug_assert_eq!(self.data(id).len(), 1);
        self.data(id)[0]
    }

    /// Gradient of the last `backward` loss w.r.t. a leaf, if it received one.
    pub fn grad(&self, id: TensorId) -> Option<&[S]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    fn rows_cols(&self, id: TensorId, op: &'static str) -> Result<(usize, usize), NumericsError> {
        match self.shape(id) {
            [n, m] => Ok((*n, *m)),
            other => Err(NumericsError::NotMatrix { op, shape: other.to_vec() }),
        }
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<S>) -> Result<TensorId, NumericsError> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(NumericsError::DataLengthMismatch { len: data.len(), shape });
        }
        Ok(self.push(shape, Storage::Owned(data), false, Op::Leaf))
    }

    /// Trainable leaf sharing its storage with the caller (no copy).
    pub fn param(&mut self, shape: Vec<usize>, data: Arc<Vec<S>>) -> Result<TensorId, NumericsError> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(NumericsError::DataLengthMismatch { len: data.len(), shape });
        }
        Ok(self.push(shape, Storage::Shared(data), true, Op::Leaf))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, NumericsError> {
        if self.shape(a) != self.shape(b) {
            return Err(NumericsError::ShapeMismatch {
                op: "add",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let data: Vec<S> = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x + y).collect();
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(self.shape(a).to_vec(), Storage::Owned(data), req, Op::Add(a, b)))
    }

    /// `[n, d] + [d]`, the bias broadcast over rows.
    pub fn add_bias(&mut self, x: TensorId, bias: TensorId) -> Result<TensorId, NumericsError> {
        let (n, d) = self.rows_cols(x, "add_bias")?;
        if self.shape(bias) != [d] {
            return Err(NumericsError::ShapeMismatch {
                op: "add_bias",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(bias).to_vec(),
            });
        }
        let xs = self.data(x);
        let bs = self.data(bias);
        let mut data = Vec::with_capacity(n * d);
        for r in 0..n {
            for c in 0..d {
                data.push(xs[r * d + c] + bs[c]);
            }
        }
        let req = self.requires(x) || self.requires(bias);
        Ok(self.push(vec![n, d], Storage::Owned(data), req, Op::AddBias(x, bias)))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, NumericsError> {
        if self.shape(a) != self.shape(b) {
            return Err(NumericsError::ShapeMismatch {
                op: "mul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let data: Vec<S> = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x * y).collect();
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(self.shape(a).to_vec(), Storage::Owned(data), req, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: TensorId, c: S) -> Result<TensorId, NumericsError> {
        let data: Vec<S> = self.data(x).iter().map(|&v| v * c).collect();
        let req = self.requires(x);
        Ok(self.push(self.shape(x).to_vec(), Storage::Owned(data), req, Op::Scale(x, c)))
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, NumericsError> {
        let (n, k) = self.rows_cols(a, "matmul")?;
        let (k2, m) = self.rows_cols(b, "matmul")?;
        if k != k2 {
            return Err(NumericsError::ShapeMismatch {
                op: "matmul",
                lhs: vec![n, k],
                rhs: vec![k2, m],
            });
        }
        let mut out = vec![S::zero(); n * m];
        matmul_nn(self.data(a), self.data(b), n, k, m, &mut out);
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(vec![n, m], Storage::Owned(out), req, Op::Matmul(a, b)))
    }

    pub fn transpose(&mut self, x: TensorId) -> Result<TensorId, NumericsError> {
        let (n, m) = self.rows_cols(x, "transpose")?;
        let xs = self.data(x);
        let mut out = vec![S::zero(); n * m];
        for r in 0..n {
            for c in 0..m {
                out[c * n + r] = xs[r * m + c];
            }
        }
        let req = self.requires(x);
        Ok(self.push(vec![m, n], Storage::Owned(out), req, Op::Transpose(x)))
    }

    pub fn slice_rows(&mut self, x: TensorId, start: usize, len: usize) -> Result<TensorId, NumericsError> {
        let (n, d) = self.rows_cols(x, "slice_rows")?;
        if len == 0 || start + len > n {
            return Err(NumericsError::BadArgument {
                op: "slice_rows",
                detail: format!("rows {start}..{} of a {n}-row tensor", start + len),
            });
        }
        let data = self.data(x)[start * d..(start + len) * d].to_vec();
        let req = self.requires(x);
        Ok(self.push(vec![len, d], Storage::Owned(data), req, Op::SliceRows(x, start)))
    }

    pub fn concat_rows(&mut self, parts: &[TensorId]) -> Result<TensorId, NumericsError> {
        if parts.is_empty() {
            return Err(NumericsError::BadArgument { op: "concat_rows", detail: "no parts".into() });
        }
        let (_, d) = self.rows_cols(parts[0], "concat_rows")?;
        let mut total = 0;
        for &p in parts {
            let (pn, pd) = self.rows_cols(p, "concat_rows")?;
            if pd != d {
                return Err(NumericsError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.shape(parts[0]).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            total += pn;
        }
        let mut data = Vec::with_capacity(total * d);
        for &p in parts {
            data.extend_from_slice(self.data(p));
        }
        let req = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(vec![total, d], Storage::Owned(data), req, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, x: TensorId, start: usize, len: usize) -> Result<TensorId, NumericsError> {
        let (n, d) = self.rows_cols(x, "slice_cols")?;
        if len == 0 || start + len > d {
            return Err(NumericsError::BadArgument {
                op: "slice_cols",
                detail: format!("cols {start}..{} of a {d}-col tensor", start + len),
            });
        }
        let xs = self.data(x);
        let mut data = Vec::with_capacity(n * len);
        for r in 0..n {
            data.extend_from_slice(&xs[r * d + start..r * d + start + len]);
        }
        let req = self.requires(x);
        Ok(self.push(vec![n, len], Storage::Owned(data), req, Op::SliceCols(x, start)))
    }

    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId, NumericsError> {
        if parts.is_empty() {
            return Err(NumericsError::BadArgument { op: "concat_cols", detail: "no parts".into() });
        }
        let (n, _) = self.rows_cols(parts[0], "concat_cols")?;
        let mut total = 0;
        for &p in parts {
            let (pn, pd) = self.rows_cols(p, "concat_cols")?;
            if pn != n {
                return Err(NumericsError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.shape(parts[0]).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            total += pd;
        }
        let mut data = Vec::with_capacity(n * total);
        for r in 0..n {
            for &p in parts {
                let (_, pd) = self.rows_cols(p, "concat_cols")?;
                data.extend_from_slice(&self.data(p)[r * pd..(r + 1) * pd]);
            }
        }
        let req = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(vec![n, total], Storage::Owned(data), req, Op::ConcatCols(parts.to_vec())))
    }

    pub fn gelu(&mut self, x: TensorId) -> Result<TensorId, NumericsError> {
        let data: Vec<S> = self.data(x).iter().map(|&v| gelu_fwd(v)).collect();
        let req = self.requires(x);
        Ok(self.push(self.shape(x).to_vec(), Storage::Owned(data), req, Op::Gelu(x)))
    }

    /// Row-wise layer norm with learned gain and shift; eps = 1e-5.
    pub fn layer_norm(&mut self, x: TensorId, gamma: TensorId, beta: TensorId) -> Result<TensorId, NumericsError> {
        let (n, d) = self.rows_cols(x, "layer_norm")?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(NumericsError::ShapeMismatch {
                op: "layer_norm",
                lhs: vec![d],
                rhs: self.shape(gamma).to_vec(),
            });
        }
        let eps = S::from_f64_c(1e-5);
        let inv_d = S::one() / S::from_usize(d).unwrap();
        let xs = self.data(x);
        let gs = self.data(gamma);
        let bs = self.data(beta);
        let mut data = Vec::with_capacity(n * d);
        let mut stats = Vec::with_capacity(n);
        for r in 0..n {
            let row = &xs[r * d..(r + 1) * d];
            let mut mean = S::zero();
            for &v in row {
                mean += v;
            }
            mean = mean * inv_d;
            let mut var = S::zero();
            for &v in row {
                var += (v - mean) * (v - mean);
            }
            var = var * inv_d;
            let inv_std = S::one() / (var + eps).sqrt();
            stats.push((mean, inv_std));
            for c in 0..d {
                data.push((row[c] - mean) * inv_std * gs[c] + bs[c]);
            }
        }
        let req = self.requires(x) || self.requires(gamma) || self.requires(beta);
        Ok(self.push(vec![n, d], Storage::Owned(data), req, Op::LayerNorm { x, gamma, beta, stats }))
    }

    /// Row softmax of `x / temperature` under a boolean mask (`true` =
    /// position may be attended).
    ///
    /// Masked entries never enter the max or the normalizer, so the output at
    /// unmasked positions is bitwise independent of masked inputs; masked
    /// outputs are exactly zero.
    pub fn softmax_masked(
        &mut self,
        x: TensorId,
        mask: Arc<Vec<bool>>,
        temperature: S,
    ) -> Result<TensorId, NumericsError> {
        let (n, m) = self.rows_cols(x, "softmax_masked")?;
        if mask.len() != n * m {
            return Err(NumericsError::BadArgument {
                op: "softmax_masked",
                detail: format!("mask has {} entries for a {n}x{m} tensor", mask.len()),
            });
        }
        if !(temperature > S::zero()) || !temperature.is_finite() {
            return Err(NumericsError::BadArgument {
                op: "softmax_masked",
                detail: format!("temperature {temperature} is not a positive finite number"),
            });
        }
        let inv_t = S::one() / temperature;
        let xs = self.data(x);
        let mut data = vec![S::zero(); n * m];
        for r in 0..n {
            let row = &xs[r * m..(r + 1) * m];
            let mrow = &mask[r * m..(r + 1) * m];
            let mut maxv: Option<S> = None;
            for c in 0..m {
                if mrow[c] {
                    let z = row[c] * inv_t;
                    maxv = Some(match maxv {
                        Some(cur) if cur >= z => cur,
                        _ => z,
                    });
                }
            }
            let maxv = maxv.ok_or_else(|| NumericsError::BadArgument {
                op: "softmax_masked",
                detail: format!("row {r} is fully masked"),
            })?;
            let mut denom = S::zero();
            for c in 0..m {
                if mrow[c] {
                    let e = (row[c] * inv_t - maxv).exp();
                    data[r * m + c] = e;
                    denom += e;
                }
            }
            let inv = S::one() / denom;
            for c in 0..m {
                if mrow[c] {
                    data[r * m + c] *= inv;
                }
            }
        }
        let req = self.requires(x);
        Ok(self.push(vec![n, m], Storage::Owned(data), req, Op::SoftmaxMasked { x, mask, temperature }))
    }

    /// Row gather: output row i is `table[ids[i]]`.
    pub fn embed(&mut self, table: TensorId, ids: &[usize]) -> Result<TensorId, NumericsError> {
        let (v, d) = self.rows_cols(table, "embed")?;
        if ids.is_empty() {
            return Err(NumericsError::BadArgument { op: "embed", detail: "no ids".into() });
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(NumericsError::BadArgument {
                op: "embed",
                detail: format!("id {bad} out of range for {v} rows"),
            });
        }
        let ts = self.data(table);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(&ts[i * d..(i + 1) * d]);
        }
        let req = self.requires(table);
        Ok(self.push(vec![ids.len(), d], Storage::Owned(data), req, Op::Embed { table, ids: ids.to_vec() }))
    }

    /// Inverted dropout. `rate = 0` is the identity (no node added). The mask
    /// is a pure function of the tape's dropout key and the call site index,
    /// so forward and backward agree without storing it.
    pub fn dropout(&mut self, x: TensorId, rate: f64) -> Result<TensorId, NumericsError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NumericsError::BadArgument {
                op: "dropout",
                detail: format!("rate {rate} outside [0, 1)"),
            });
        }
        if rate == 0.0 {
            return Ok(x);
        }
        let site = self.dropout_sites;
        self.dropout_sites += 1;
        let key = mix2(self.dropout_key, site);
        let keep_scale = S::from_f64_c(1.0 / (1.0 - rate));
        let data: Vec<S> = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| if unit_f64(mix2(key, i as u64)) >= rate { v * keep_scale } else { S::zero() })
            .collect();
        let req = self.requires(x);
        Ok(self.push(self.shape(x).to_vec(), Storage::Owned(data), req, Op::Dropout { x, rate, key }))
    }

    /// Mean cross-entropy from logits over rows whose target is not
    /// `ignore_id`. Targets index the logit columns.
    pub fn cross_entropy_mean(
        &mut self,
        logits: TensorId,
        targets: &[usize],
        ignore_id: usize,
    ) -> Result<TensorId, NumericsError> {
        let (n, v) = self.rows_cols(logits, "cross_entropy")?;
        if targets.len() != n {
            return Err(NumericsError::BadArgument {
                op: "cross_entropy",
                detail: format!("{} targets for {n} logit rows", targets.len()),
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t != ignore_id && t >= v) {
            return Err(NumericsError::BadArgument {
                op: "cross_entropy",
                detail: format!("target {bad} out of range for {v} classes"),
            });
        }
        let scored = targets.iter().filter(|&&t| t != ignore_id).count();
        if scored == 0 {
            return Err(NumericsError::BadArgument {
                op: "cross_entropy",
                detail: "all targets ignored".into(),
            });
        }
        let xs = self.data(logits);
        let mut probs = vec![S::zero(); n * v];
        let mut total = S::zero();
        for r in 0..n {
            if targets[r] == ignore_id {
                continue;
            }
            let row = &xs[r * v..(r + 1) * v];
            let mut maxv = row[0];
            for &x in row {
                if x > maxv {
                    maxv = x;
                }
            }
            let mut denom = S::zero();
            for c in 0..v {
                let e = (row[c] - maxv).exp();
                probs[r * v + c] = e;
                denom += e;
            }
            let inv = S::one() / denom;
            for c in 0..v {
                probs[r * v + c] *= inv;
            }
            total += denom.ln() + maxv - row[targets[r]];
        }
        let loss = total / S::from_usize(scored).unwrap();
        if !loss.is_finite() {
            return Err(NumericsError::NonFinite("cross_entropy"));
        }
        let req = self.requires(logits);
        Ok(self.push(
            vec![1],
            Storage::Owned(vec![loss]),
            req,
            Op::CrossEntropy { logits, targets: targets.to_vec(), ignore_id, probs, scored },
        ))
    }

    pub fn sum(&mut self, x: TensorId) -> Result<TensorId, NumericsError> {
        let mut total = S::zero();
        for &v in self.data(x) {
            total += v;
        }
        let req = self.requires(x);
        Ok(self.push(vec![1], Storage::Owned(vec![total]), req, Op::Sum(x)))
    }

    /// Reverse pass from a scalar loss. Gradients land on leaf tensors and
    /// stay readable until the next `backward` call.
    pub fn backward(&mut self, loss: TensorId) -> Result<(), NumericsError> {
        if self.data(loss).len() != 1 {
            return Err(NumericsError::LossNotScalar { shape: self.shape(loss).to_vec() });
        }
        let mut grads: Vec<Option<Vec<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![S::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        self.grads = grads;
        Ok(())
    }

    /// Adds this node's contribution to its inputs' gradients.
    fn propagate(&self, i: usize, g: &[S], grads: &mut Vec<Option<Vec<S>>>) {
        let node = &self.nodes[i];
        let mut accum = |this: &Self, id: TensorId, f: &mut dyn FnMut(&mut [S])| {
            if !this.nodes[id.0].requires_grad {
                return;
            }
            let buf = grads[id.0].get_or_insert_with(|| vec![S::zero(); this.data(id).len()]);
            f(buf);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accum(self, *a, &mut |buf| add_into(buf, g));
                accum(self, *b, &mut |buf| add_into(buf, g));
            }
            Op::AddBias(x, bias) => {
                let d = self.data(*bias).len();
                accum(self, *x, &mut |buf| add_into(buf, g));
                accum(self, *bias, &mut |buf| {
                    for (i, &gv) in g.iter().enumerate() {
                        buf[i % d] += gv;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (da, db) = (self.data(*a), self.data(*b));
                accum(self, *a, &mut |buf| {
                    for i in 0..g.len() {
                        buf[i] += g[i] * db[i];
                    }
                });
                accum(self, *b, &mut |buf| {
                    for i in 0..g.len() {
                        buf[i] += g[i] * da[i];
                    }
                });
            }
            Op::Scale(x, c) => {
                accum(self, *x, &mut |buf| {
                    for i in 0..g.len() {
                        buf[i] += g[i] * *c;
                    }
                });
            }
            Op::Matmul(a, b) => {
                let (n, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let m = self.shape(*b)[1];
                let (da, db) = (self.data(*a), self.data(*b));
                accum(self, *a, &mut |buf| matmul_nt(g, db, n, m, k, buf));
                accum(self, *b, &mut |buf| matmul_tn(da, g, n, k, m, buf));
            }
            Op::Transpose(x) => {
                let (m, n) = (node.shape[0], node.shape[1]);
                accum(self, *x, &mut |buf| {
                    for r in 0..m {
                        for c in 0..n {
                            buf[c * m + r] += g[r * n + c];
                        }
                    }
                });
            }
            Op::SliceRows(x, start) => {
                let d = node.shape[1];
                let offset = start * d;
                accum(self, *x, &mut |buf| {
                    for (i, &gv) in g.iter().enumerate() {
                        buf[offset + i] += gv;
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.data(p).len();
                    let gp = &g[offset..offset + len];
                    accum(self, p, &mut |buf| add_into(buf, gp));
                    offset += len;
                }
            }
            Op::SliceCols(x, start) => {
                let (n, len) = (node.shape[0], node.shape[1]);
                let d = self.shape(*x)[1];
                accum(self, *x, &mut |buf| {
                    for r in 0..n {
                        for c in 0..len {
                            buf[r * d + start + c] += g[r * len + c];
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let n = node.shape[0];
                let total = node.shape[1];
                let mut offset = 0;
                for &p in parts {
                    let pd = self.shape(p)[1];
                    accum(self, p, &mut |buf| {
                        for r in 0..n {
                            for c in 0..pd {
                                buf[r * pd + c] += g[r * total + offset + c];
                            }
                        }
                    });
                    offset += pd;
                }
            }
            Op::Gelu(x) => {
                let dx = self.data(*x);
                accum(self, *x, &mut |buf| {
                    for i in 0..g.len() {
                        buf[i] += g[i] * gelu_bwd(dx[i]);
                    }
                });
            }
            Op::LayerNorm { x, gamma, beta, stats } => {
                let (n, d) = (node.shape[0], node.shape[1]);
                let xs = self.data(*x);
                let gs = self.data(*gamma);
                let inv_d = S::one() / S::from_usize(d).unwrap();
                accum(self, *gamma, &mut |buf| {
                    for r in 0..n {
                        let (mean, inv_std) = stats[r];
                        for c in 0..d {
                            let xhat = (xs[r * d + c] - mean) * inv_std;
                            buf[c] += g[r * d + c] * xhat;
                        }
                    }
                });
                accum(self, *beta, &mut |buf| {
                    for r in 0..n {
                        for c in 0..d {
                            buf[c] += g[r * d + c];
                        }
                    }
                });
                accum(self, *x, &mut |buf| {
                    for r in 0..n {
                        let (mean, inv_std) = stats[r];
                        let row = &xs[r * d..(r + 1) * d];
                        let grow = &g[r * d..(r + 1) * d];
                        let mut sum_gy = S::zero();
                        let mut sum_gy_xhat = S::zero();
                        for c in 0..d {
                            let gy = grow[c] * gs[c];
                            let xhat = (row[c] - mean) * inv_std;
                            sum_gy += gy;
                            sum_gy_xhat += gy * xhat;
                        }
                        for c in 0..d {
                            let gy = grow[c] * gs[c];
                            let xhat = (row[c] - mean) * inv_std;
                            buf[r * d + c] +=
                                inv_std * (gy - inv_d * sum_gy - xhat * inv_d * sum_gy_xhat);
                        }
                    }
                });
            }
            Op::SoftmaxMasked { x, mask, temperature } => {
                let (n, m) = (node.shape[0], node.shape[1]);
                let ys = node.data.as_slice();
                let inv_t = S::one() / *temperature;
                accum(self, *x, &mut |buf| {
                    for r in 0..n {
                        let yrow = &ys[r * m..(r + 1) * m];
                        let grow = &g[r * m..(r + 1) * m];
                        let mrow = &mask[r * m..(r + 1) * m];
                        let mut dot = S::zero();
                        for c in 0..m {
                            if mrow[c] {
                                dot += grow[c] * yrow[c];
                            }
                        }
                        for c in 0..m {
                            if mrow[c] {
                                buf[r * m + c] += inv_t * yrow[c] * (grow[c] - dot);
                            }
                        }
                    }
                });
            }
            Op::Embed { table, ids } => {
                let d = node.shape[1];
                accum(self, *table, &mut |buf| {
                    for (r, &id) in ids.iter().enumerate() {
                        for c in 0..d {
                            buf[id * d + c] += g[r * d + c];
                        }
                    }
                });
            }
            Op::Dropout { x, rate, key } => {
                let keep_scale = S::from_f64_c(1.0 / (1.0 - rate));
                accum(self, *x, &mut |buf| {
                    for i in 0..g.len() {
                        if unit_f64(mix2(*key, i as u64)) >= *rate {
                            buf[i] += g[i] * keep_scale;
                        }
                    }
                });
            }
            Op::CrossEntropy { logits, targets, ignore_id, probs, scored } => {
                let v = self.shape(*logits)[1];
                let gl = g[0] / S::from_usize(*scored).unwrap();
                accum(self, *logits, &mut |buf| {
                    for (r, &t) in targets.iter().enumerate() {
                        if t == *ignore_id {
                            continue;
                        }
                        for c in 0..v {
                            let indicator = if c == t { S::one() } else { S::zero() };
                            buf[r * v + c] += gl * (probs[r * v + c] - indicator);
                        }
                    }
                });
            }
            Op::Sum(x) => {
                accum(self, *x, &mut |buf| {
                    for b in buf.iter_mut() {
                        *b += g[0];
                    }
                });
            }
        }
    }
}

fn add_into<S: Scalar>(buf: &mut [S], g: &[S]) {
    for i in 0..g.len() {
        buf[i] += g[i];
    }
}

/// out += a @ b. Skips exact-zero multiplicands so rows weighted 0 by an
/// attention mask contribute nothing, bit for bit.
fn matmul_nn<S: Scalar>(a: &[S], b: &[S], n: usize, k: usize, m: usize, out: &mut [S]) {
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * m..(i + 1) * m];
        for (p, &av) in arow.iter().enumerate() {
            if av == S::zero() {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for j in 0..m {
                orow[j] += av * brow[j];
            }
        }
    }
}

/// out += g @ b^T where g is [n, m] and b is [k, m].
fn matmul_nt<S: Scalar>(g: &[S], b: &[S], n: usize, m: usize, k: usize, out: &mut [S]) {
    for i in 0..n {
        let grow = &g[i * m..(i + 1) * m];
        let orow = &mut out[i * k..(i + 1) * k];
        for p in 0..k {
            let brow = &b[p * m..(p + 1) * m];
            let mut acc = S::zero();
            for j in 0..m {
                acc += grow[j] * brow[j];
            }
            orow[p] += acc;
        }
    }
}

/// out += a^T @ g where a is [n, k] and g is [n, m].
fn matmul_tn<S: Scalar>(a: &[S], g: &[S], n: usize, k: usize, m: usize, out: &mut [S]) {
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        let grow = &g[i * m..(i + 1) * m];
        for (p, &av) in arow.iter().enumerate() {
            if av == S::zero() {
                continue;
            }
            let orow = &mut out[p * m..(p + 1) * m];
            for j in 0..m {
                orow[j] += av * grow[j];
            }
        }
    }
}

/// Tanh-approximation gelu.
fn gelu_fwd<S: Scalar>(x: S) -> S {
    let c = S::from_f64_c(0.7978845608028654); // sqrt(2/pi)
    let a = S::from_f64_c(0.044715);
    let half = S::from_f64_c(0.5);
    let u = c * (x + a * x * x * x);
    half * x * (S::one() + u.tanh())
}

fn gelu_bwd<S: Scalar>(x: S) -> S {
    let c = S::from_f64_c(0.7978845608028654);
    let a = S::from_f64_c(0.044715);
    let half = S::from_f64_c(0.5);
    let three = S::from_f64_c(3.0);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let du = c * (S::one() + three * a * x * x);
    half * (S::one() + t) + half * x * (S::one() - t * t) * du
}
