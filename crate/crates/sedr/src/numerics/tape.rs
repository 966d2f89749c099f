//! Reverse-mode autodiff on a Wengert tape of 2-D tensors.
//!
//! Every operation appends a node holding its output values and enough
//! information to replay its local derivative. `backward` walks the tape in
//! reverse, accumulating gradients into every node that requires them.
//! All reductions run left-to-right so forward passes are bit-deterministic
//! for identical inputs.

use super::scalar::Scalar;
use crate::error::{Result, SedrError};
use rayon::prelude::*;

/// Handle to a tensor node owned by a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

/// One node on the tape: values plus the operation that produced them.
#[derive(Debug, Clone)]
pub struct Tensor<S: Scalar> {
    pub data: Vec<S>,
    /// `[rows, cols]`; scalars are `[1, 1]`.
    pub shape: Vec<usize>,
    pub requires_grad: bool,
    /// Accumulated gradient; populated by `backward`, `None` until then.
    pub grad: Option<Vec<S>>,
    pub(crate) op: Op<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn rows(&self) -> usize {
        self.shape[0]
    }
    pub fn cols(&self) -> usize {
        self.shape[1]
    }
}

/// Recorded operation; fields are whatever the backward rule needs.
#[derive(Debug, Clone)]
pub(crate) enum Op<S: Scalar> {
    Leaf,
    Matmul { a: TensorId, b: TensorId },
    /// `C = A · Bᵀ` with `A: [m×k]`, `B: [n×k]`.
    MatmulTransB { a: TensorId, b: TensorId },
    Add { a: TensorId, b: TensorId },
    Sub { a: TensorId, b: TensorId },
    Scale { a: TensorId, factor: S },
    /// `y[i][j] = a[i][j] + bias[j]` with `bias: [1×cols]`.
    AddRowBroadcast { a: TensorId, bias: TensorId },
    Gelu { a: TensorId },
    LayerNorm { x: TensorId, gain: TensorId, bias: TensorId, eps: S },
    /// Row-wise softmax; `false` mask entries are excluded and output 0.
    SoftmaxRows { x: TensorId, mask: Option<Vec<bool>> },
    ConcatRows { parts: Vec<TensorId> },
    ConcatCols { parts: Vec<TensorId> },
    SelectRows { a: TensorId, indices: Vec<usize> },
    SliceCols { a: TensorId, start: usize, len: usize },
    /// Embedding lookup: rows of `table` selected by `ids`.
    GatherRows { table: TensorId, ids: Vec<usize> },
    SumAll { a: TensorId },
    /// Max over all elements; ties resolve to the lowest flat index.
    MaxAll { a: TensorId, argmax: usize },
    LogSumExp { a: TensorId },
}

impl<S: Scalar> Op<S> {
    fn kind(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Matmul { .. } => "matmul",
            Op::MatmulTransB { .. } => "matmul_transb",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Scale { .. } => "scale",
            Op::AddRowBroadcast { .. } => "add_row_broadcast",
            Op::Gelu { .. } => "gelu",
            Op::LayerNorm { .. } => "layer_norm",
            Op::SoftmaxRows { .. } => "softmax_rows",
            Op::ConcatRows { .. } => "concat_rows",
            Op::ConcatCols { .. } => "concat_cols",
            Op::SelectRows { .. } => "select_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::GatherRows { .. } => "gather_rows",
            Op::SumAll { .. } => "sum_all",
            Op::MaxAll { .. } => "max_all",
            Op::LogSumExp { .. } => "logsumexp",
        }
    }
}

// ── raw matmul kernels ──────────────────────────────────────────────────────
//
// Each output element accumulates over the shared dimension in ascending
// order, so the parallel and sequential paths produce identical bits.

const PAR_FLOP_THRESHOLD: usize = 1 << 17;

fn par_rows<S, F>(c: &mut [S], n: usize, work: usize, f: F)
where
    S: Scalar,
    F: Fn(usize, &mut [S]) + Send + Sync,
{
    if work >= PAR_FLOP_THRESHOLD && c.len() / n > 1 {
        c.par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
    } else {
        for (i, row) in c.chunks_mut(n).enumerate() {
            f(i, row);
        }
    }
}

/// `C[m×n] = A[m×k] · B[k×n]`
pub(crate) fn matmul_nn<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut c = vec![S::zero(); m * n];
    par_rows(&mut c, n, m * k * n, |i, row| {
        for p in 0..k {
            let a_ip = a[i * k + p];
            let b_row = &b[p * n..(p + 1) * n];
            for (cj, bj) in row.iter_mut().zip(b_row) {
                *cj += a_ip * *bj;
            }
        }
    });
    c
}

/// `C[m×n] = A[m×k] · B[n×k]ᵀ`
pub(crate) fn matmul_nt<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut c = vec![S::zero(); m * n];
    par_rows(&mut c, n, m * k * n, |i, row| {
        let a_row = &a[i * k..(i + 1) * k];
        for (j, cj) in row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = S::zero();
            for (x, y) in a_row.iter().zip(b_row) {
                acc = acc + *x * *y;
            }
            *cj = acc;
        }
    });
    c
}

/// `C[m×n] = A[k×m]ᵀ · B[k×n]`
pub(crate) fn matmul_tn<S: Scalar>(a: &[S], b: &[S], k: usize, m: usize, n: usize) -> Vec<S> {
    let mut c = vec![S::zero(); m * n];
    par_rows(&mut c, n, m * k * n, |i, row| {
        for p in 0..k {
            let a_pi = a[p * m + i];
            let b_row = &b[p * n..(p + 1) * n];
            for (cj, bj) in row.iter_mut().zip(b_row) {
                *cj += a_pi * *bj;
            }
        }
    });
    c
}

fn gelu_value<S: Scalar>(x: S) -> S {
    // tanh approximation: 0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))
    let c0 = S::from_f64_lossy(0.797_884_560_802_865_4); // √(2/π)
    let c1 = S::from_f64_lossy(0.044_715);
    let half = S::from_f64_lossy(0.5);
    let u = c0 * (x + c1 * x * x * x);
    half * x * (S::one() + u.tanh())
}

fn gelu_derivative<S: Scalar>(x: S) -> S {
    let c0 = S::from_f64_lossy(0.797_884_560_802_865_4);
    let c1 = S::from_f64_lossy(0.044_715);
    let half = S::from_f64_lossy(0.5);
    let three = S::from_f64_lossy(3.0);
    let u = c0 * (x + c1 * x * x * x);
    let t = u.tanh();
    let du = c0 * (S::one() + three * c1 * x * x);
    half * (S::one() + t) + half * x * (S::one() - t * t) * du
}

// ── the tape ────────────────────────────────────────────────────────────────

/// Arena of tensor nodes recording one forward computation.
#[derive(Debug, Default)]
pub struct Tape<S: Scalar> {
    nodes: Vec<Tensor<S>>,
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, data: Vec<S>, rows: usize, cols: usize, requires_grad: bool, op: Op<S>) -> TensorId {
        debug_assert!(
            data.iter().all(|v| v.is_finite()),
            "non-finite value produced by op `{}`",
            op.kind()
        );
        debug_assert_eq!(data.len(), rows * cols);
        self.nodes.push(Tensor {
            data,
            shape: vec![rows, cols],
            requires_grad,
            grad: None,
            op,
        });
        TensorId(self.nodes.len() - 1)
    }

    fn node(&self, id: TensorId) -> &Tensor<S> {
        &self.nodes[id.0]
    }

    pub fn tensor(&self, id: TensorId) -> &Tensor<S> {
        self.node(id)
    }

    pub fn value(&self, id: TensorId) -> &[S] {
        &self.node(id).data
    }

    pub fn shape(&self, id: TensorId) -> (usize, usize) {
        let n = self.node(id);
        (n.rows(), n.cols())
    }

    /// Value of a 1-element tensor.
    pub fn scalar_value(&self, id: TensorId) -> S {
        debug_assert_eq!(self.node(id).data.len(), 1);
        self.node(id).data[0]
    }

    /// Accumulated gradient of a node, if `backward` reached it.
    pub fn grad(&self, id: TensorId) -> Option<&[S]> {
        self.node(id).grad.as_deref()
    }

    // ── constructors ────────────────────────────────────────────────────

    /// Insert a leaf tensor (parameter if `requires_grad`, constant if not).
    pub fn leaf(&mut self, data: Vec<S>, rows: usize, cols: usize, requires_grad: bool) -> Result<TensorId> {
        if data.len() != rows * cols {
            return Err(SedrError::Dimension(format!(
                "leaf data length {} does not match shape {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(self.push(data, rows, cols, requires_grad, Op::Leaf))
    }

    /// Insert a constant (non-differentiable) leaf.
    pub fn constant(&mut self, data: Vec<S>, rows: usize, cols: usize) -> Result<TensorId> {
        self.leaf(data, rows, cols, false)
    }

    // ── forward ops ─────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (m, ka) = self.shape(a);
        let (kb, n) = self.shape(b);
        if ka != kb {
            return Err(SedrError::Dimension(format!(
                "matmul: {m}x{ka} is incompatible with {kb}x{n}"
            )));
        }
        let data = matmul_nn(&self.node(a).data, &self.node(b).data, m, ka, n);
        let rg = self.node(a).requires_grad || self.node(b).requires_grad;
        Ok(self.push(data, m, n, rg, Op::Matmul { a, b }))
    }

    /// `A · Bᵀ`: rows of `b` are dotted against rows of `a`.
    pub fn matmul_transb(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (m, ka) = self.shape(a);
        let (n, kb) = self.shape(b);
        if ka != kb {
            return Err(SedrError::Dimension(format!(
                "matmul_transb: {m}x{ka} is incompatible with ({n}x{kb})T"
            )));
        }
        let data = matmul_nt(&self.node(a).data, &self.node(b).data, m, ka, n);
        let rg = self.node(a).requires_grad || self.node(b).requires_grad;
        Ok(self.push(data, m, n, rg, Op::MatmulTransB { a, b }))
    }

    fn binary_same_shape(&self, name: &str, a: TensorId, b: TensorId) -> Result<(usize, usize)> {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        if (ra, ca) != (rb, cb) {
            return Err(SedrError::Dimension(format!(
                "{name}: {ra}x{ca} vs {rb}x{cb}"
            )));
        }
        Ok((ra, ca))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (r, c) = self.binary_same_shape("add", a, b)?;
        let data: Vec<S> = self
            .node(a)
            .data
            .iter()
            .zip(&self.node(b).data)
            .map(|(x, y)| *x + *y)
            .collect();
        let rg = self.node(a).requires_grad || self.node(b).requires_grad;
        Ok(self.push(data, r, c, rg, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (r, c) = self.binary_same_shape("sub", a, b)?;
        let data: Vec<S> = self
            .node(a)
            .data
            .iter()
            .zip(&self.node(b).data)
            .map(|(x, y)| *x - *y)
            .collect();
        let rg = self.node(a).requires_grad || self.node(b).requires_grad;
        Ok(self.push(data, r, c, rg, Op::Sub { a, b }))
    }

    pub fn scale(&mut self, a: TensorId, factor: S) -> Result<TensorId> {
        let (r, c) = self.shape(a);
        let data: Vec<S> = self.node(a).data.iter().map(|x| *x * factor).collect();
        let rg = self.node(a).requires_grad;
        Ok(self.push(data, r, c, rg, Op::Scale { a, factor }))
    }

    /// Add a `[1×cols]` bias vector to every row of `a`.
    pub fn add_row_broadcast(&mut self, a: TensorId, bias: TensorId) -> Result<TensorId> {
        let (r, c) = self.shape(a);
        let (rb, cb) = self.shape(bias);
        if rb != 1 || cb != c {
            return Err(SedrError::Dimension(format!(
                "add_row_broadcast: bias {rb}x{cb} does not broadcast over {r}x{c}"
            )));
        }
        let bias_data = &self.node(bias).data;
        let mut data = Vec::with_capacity(r * c);
        for row in self.node(a).data.chunks(c) {
            for (x, b) in row.iter().zip(bias_data) {
                data.push(*x + *b);
            }
        }
        let rg = self.node(a).requires_grad || self.node(bias).requires_grad;
        Ok(self.push(data, r, c, rg, Op::AddRowBroadcast { a, bias }))
    }

    pub fn gelu(&mut self, a: TensorId) -> Result<TensorId> {
        let (r, c) = self.shape(a);
        let data: Vec<S> = self.node(a).data.iter().map(|x| gelu_value(*x)).collect();
        let rg = self.node(a).requires_grad;
        Ok(self.push(data, r, c, rg, Op::Gelu { a }))
    }

    /// Row-wise layer normalization with learned gain and bias (`[1×cols]`).
    pub fn layer_norm(&mut self, x: TensorId, gain: TensorId, bias: TensorId, eps: S) -> Result<TensorId> {
        let (r, c) = self.shape(x);
        for (name, t) in [("gain", gain), ("bias", bias)] {
            let (tr, tc) = self.shape(t);
            if tr != 1 || tc != c {
                return Err(SedrError::Dimension(format!(
                    "layer_norm: {name} {tr}x{tc} does not match row width {c}"
                )));
            }
        }
        let gain_d = self.node(gain).data.clone();
        let bias_d = self.node(bias).data.clone();
        let mut data = Vec::with_capacity(r * c);
        let cn = S::from_f64_lossy(c as f64);
        for row in self.node(x).data.chunks(c) {
            let mut mean = S::zero();
            for v in row {
                mean += *v;
            }
            mean = mean / cn;
            let mut var = S::zero();
            for v in row {
                let d = *v - mean;
                var += d * d;
            }
            var = var / cn;
            let inv_std = (var + eps).sqrt().recip();
            for (j, v) in row.iter().enumerate() {
                data.push((*v - mean) * inv_std * gain_d[j] + bias_d[j]);
            }
        }
        let rg = self.node(x).requires_grad
            || self.node(gain).requires_grad
            || self.node(bias).requires_grad;
        Ok(self.push(data, r, c, rg, Op::LayerNorm { x, gain, bias, eps }))
    }

    /// Row-wise softmax. Masked (`false`) entries are excluded from the
    /// normalization and output exactly 0. Every row must keep at least one
    /// unmasked entry.
    pub fn softmax_rows(&mut self, x: TensorId, mask: Option<Vec<bool>>) -> Result<TensorId> {
        let (r, c) = self.shape(x);
        if let Some(m) = &mask {
            if m.len() != r * c {
                return Err(SedrError::Dimension(format!(
                    "softmax_rows: mask length {} does not match {r}x{c}",
                    m.len()
                )));
            }
            for (i, row) in m.chunks(c).enumerate() {
                if !row.iter().any(|&b| b) {
                    return Err(SedrError::Contract(format!(
                        "softmax_rows: row {i} is fully masked"
                    )));
                }
            }
        }
        let mut data = vec![S::zero(); r * c];
        let xs = &self.node(x).data;
        for i in 0..r {
            let row = &xs[i * c..(i + 1) * c];
            let live = |j: usize| mask.as_ref().map_or(true, |m| m[i * c + j]);
            let mut max = S::neg_infinity();
            for (j, v) in row.iter().enumerate() {
                if live(j) && *v > max {
                    max = *v;
                }
            }
            let mut sum = S::zero();
            for (j, v) in row.iter().enumerate() {
                if live(j) {
                    let e = (*v - max).exp();
                    data[i * c + j] = e;
                    sum += e;
                }
            }
            for j in 0..c {
                if live(j) {
                    data[i * c + j] = data[i * c + j] / sum;
                }
            }
        }
        let rg = self.node(x).requires_grad;
        Ok(self.push(data, r, c, rg, Op::SoftmaxRows { x, mask }))
    }

    /// Stack tensors vertically; all parts must share a column count.
    pub fn concat_rows(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(SedrError::Contract("concat_rows: no parts".into()));
        }
        let (_, c) = self.shape(parts[0]);
        let mut rows = 0;
        for p in parts {
            let (pr, pc) = self.shape(*p);
            if pc != c {
                return Err(SedrError::Dimension(format!(
                    "concat_rows: column mismatch {pc} vs {c}"
                )));
            }
            rows += pr;
        }
        let mut data = Vec::with_capacity(rows * c);
        let mut rg = false;
        for p in parts {
            data.extend_from_slice(&self.node(*p).data);
            rg |= self.node(*p).requires_grad;
        }
        Ok(self.push(data, rows, c, rg, Op::ConcatRows { parts: parts.to_vec() }))
    }

    /// Stack tensors horizontally; all parts must share a row count.
    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(SedrError::Contract("concat_cols: no parts".into()));
        }
        let (r, _) = self.shape(parts[0]);
        let mut cols = 0;
        for p in parts {
            let (pr, pc) = self.shape(*p);
            if pr != r {
                return Err(SedrError::Dimension(format!(
                    "concat_cols: row mismatch {pr} vs {r}"
                )));
            }
            cols += pc;
        }
        let mut data = vec![S::zero(); r * cols];
        let mut rg = false;
        let mut col_off = 0;
        for p in parts {
            let (_, pc) = self.shape(*p);
            let src = &self.node(*p).data;
            for i in 0..r {
                data[i * cols + col_off..i * cols + col_off + pc]
                    .copy_from_slice(&src[i * pc..(i + 1) * pc]);
            }
            rg |= self.node(*p).requires_grad;
            col_off += pc;
        }
        Ok(self.push(data, r, cols, rg, Op::ConcatCols { parts: parts.to_vec() }))
    }

    /// Copy the listed rows (duplicates allowed) into a new tensor.
    pub fn select_rows(&mut self, a: TensorId, indices: &[usize]) -> Result<TensorId> {
        let (r, c) = self.shape(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= r) {
            return Err(SedrError::Contract(format!(
                "select_rows: index {bad} out of range for {r} rows"
            )));
        }
        let src = &self.node(a).data;
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            data.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let rg = self.node(a).requires_grad;
        Ok(self.push(
            data,
            indices.len(),
            c,
            rg,
            Op::SelectRows { a, indices: indices.to_vec() },
        ))
    }

    /// Copy a contiguous range of columns.
    pub fn slice_cols(&mut self, a: TensorId, start: usize, len: usize) -> Result<TensorId> {
        let (r, c) = self.shape(a);
        if start + len > c {
            return Err(SedrError::Dimension(format!(
                "slice_cols: [{start}, {}) out of range for {c} columns",
                start + len
            )));
        }
        let src = &self.node(a).data;
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&src[i * c + start..i * c + start + len]);
        }
        let rg = self.node(a).requires_grad;
        Ok(self.push(data, r, len, rg, Op::SliceCols { a, start, len }))
    }

    /// Embedding lookup: gather rows of `table` by id, duplicates allowed.
    pub fn gather_rows(&mut self, table: TensorId, ids: &[usize]) -> Result<TensorId> {
        let (v, d) = self.shape(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(SedrError::Contract(format!(
                "gather_rows: id {bad} out of range for table with {v} rows"
            )));
        }
        let src = &self.node(table).data;
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let rg = self.node(table).requires_grad;
        Ok(self.push(data, ids.len(), d, rg, Op::GatherRows { table, ids: ids.to_vec() }))
    }

    /// Sum of all elements, left-to-right.
    pub fn sum_all(&mut self, a: TensorId) -> Result<TensorId> {
        let mut s = S::zero();
        for v in &self.node(a).data {
            s += *v;
        }
        let rg = self.node(a).requires_grad;
        Ok(self.push(vec![s], 1, 1, rg, Op::SumAll { a }))
    }

    /// Maximum over all elements; ties resolve to the lowest flat index,
    /// which is where the (sub)gradient flows.
    pub fn max_all(&mut self, a: TensorId) -> Result<TensorId> {
        let data = &self.node(a).data;
        if data.is_empty() {
            return Err(SedrError::Contract("max_all: empty tensor".into()));
        }
        let mut best = 0usize;
        for (i, v) in data.iter().enumerate() {
            if *v > data[best] {
                best = i;
            }
        }
        let v = data[best];
        let rg = self.node(a).requires_grad;
        Ok(self.push(vec![v], 1, 1, rg, Op::MaxAll { a, argmax: best }))
    }

    /// Flat index of the maximum of a previously computed `max_all` input;
    /// exposed so callers can report which element won.
    pub fn argmax_of_max(&self, max_id: TensorId) -> Option<usize> {
        match &self.node(max_id).op {
            Op::MaxAll { argmax, .. } => Some(*argmax),
            _ => None,
        }
    }

    /// log(Σ exp(x)) over all elements, computed with max subtraction.
    pub fn logsumexp(&mut self, a: TensorId) -> Result<TensorId> {
        let data = &self.node(a).data;
        if data.is_empty() {
            return Err(SedrError::Contract("logsumexp: empty tensor".into()));
        }
        let mut m = data[0];
        for v in data {
            if *v > m {
                m = *v;
            }
        }
        let mut sum = S::zero();
        for v in data {
            sum += (*v - m).exp();
        }
        let out = m + sum.ln();
        let rg = self.node(a).requires_grad;
        Ok(self.push(vec![out], 1, 1, rg, Op::LogSumExp { a }))
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Accumulate gradients of a scalar `loss` into every `requires_grad`
    /// node. Repeated calls without a reset keep accumulating, so the
    /// gradient of a sum of losses equals the sum of their gradients.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.node(loss).data.len() != 1 {
            return Err(SedrError::Contract(format!(
                "backward: loss must be scalar, got {:?}",
                self.node(loss).shape
            )));
        }
        let mut g: Vec<Option<Vec<S>>> = vec![None; self.nodes.len()];
        g[loss.0] = Some(vec![S::one()]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                g[i] = None;
                continue;
            }
            let Some(gi) = g[i].take() else { continue };
            let op = self.nodes[i].op.clone();
            self.apply_backward(&op, TensorId(i), &gi, &mut g);
            match &mut self.nodes[i].grad {
                Some(acc) => {
                    for (a, b) in acc.iter_mut().zip(&gi) {
                        *a += *b;
                    }
                }
                slot => *slot = Some(gi),
            }
        }
        Ok(())
    }

    fn add_into(&self, g: &mut [Option<Vec<S>>], id: TensorId, delta: Vec<S>) {
        if !self.node(id).requires_grad {
            return;
        }
        match &mut g[id.0] {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(&delta) {
                    *a += *b;
                }
            }
            slot => *slot = Some(delta),
        }
    }

    fn apply_backward(&self, op: &Op<S>, out: TensorId, gi: &[S], g: &mut [Option<Vec<S>>]) {
        match op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (m, k) = self.shape(*a);
                let (_, n) = self.shape(*b);
                if self.node(*a).requires_grad {
                    let da = matmul_nt(gi, &self.node(*b).data, m, n, k);
                    self.add_into(g, *a, da);
                }
                if self.node(*b).requires_grad {
                    let db = matmul_tn(&self.node(*a).data, gi, m, k, n);
                    // careful: matmul_tn computes Aᵀ·gi with A:[m×k] ⇒ [k×n]
                    self.add_into(g, *b, db);
                }
            }
            Op::MatmulTransB { a, b } => {
                // C = A·Bᵀ, A:[m×k], B:[n×k], C:[m×n]
                let (m, k) = self.shape(*a);
                let (n, _) = self.shape(*b);
                if self.node(*a).requires_grad {
                    let da = matmul_nn(gi, &self.node(*b).data, m, n, k);
                    self.add_into(g, *a, da);
                }
                if self.node(*b).requires_grad {
                    let db = matmul_tn(gi, &self.node(*a).data, m, n, k);
                    self.add_into(g, *b, db);
                }
            }
            Op::Add { a, b } => {
                self.add_into(g, *a, gi.to_vec());
                self.add_into(g, *b, gi.to_vec());
            }
            Op::Sub { a, b } => {
                self.add_into(g, *a, gi.to_vec());
                self.add_into(g, *b, gi.iter().map(|v| -*v).collect());
            }
            Op::Scale { a, factor } => {
                self.add_into(g, *a, gi.iter().map(|v| *v * *factor).collect());
            }
            Op::AddRowBroadcast { a, bias } => {
                let (r, c) = self.shape(out);
                self.add_into(g, *a, gi.to_vec());
                if self.node(*bias).requires_grad {
                    let mut db = vec![S::zero(); c];
                    for i in 0..r {
                        for j in 0..c {
                            db[j] += gi[i * c + j];
                        }
                    }
                    self.add_into(g, *bias, db);
                }
            }
            Op::Gelu { a } => {
                let da: Vec<S> = self
                    .node(*a)
                    .data
                    .iter()
                    .zip(gi)
                    .map(|(x, gy)| gelu_derivative(*x) * *gy)
                    .collect();
                self.add_into(g, *a, da);
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let (r, c) = self.shape(*x);
                let cn = S::from_f64_lossy(c as f64);
                let xs = &self.node(*x).data;
                let gain_d = &self.node(*gain).data;
                let mut dx = vec![S::zero(); r * c];
                let mut dgain = vec![S::zero(); c];
                let mut dbias = vec![S::zero(); c];
                for i in 0..r {
                    let row = &xs[i * c..(i + 1) * c];
                    let grow = &gi[i * c..(i + 1) * c];
                    let mut mean = S::zero();
                    for v in row {
                        mean += *v;
                    }
                    mean = mean / cn;
                    let mut var = S::zero();
                    for v in row {
                        let d = *v - mean;
                        var += d * d;
                    }
                    var = var / cn;
                    let inv_std = (var + *eps).sqrt().recip();
                    // xhat = (x − μ)·inv_std; dxhat = g ⊙ gain
                    let mut sum_dxhat = S::zero();
                    let mut sum_dxhat_xhat = S::zero();
                    for j in 0..c {
                        let xhat = (row[j] - mean) * inv_std;
                        let dxhat = grow[j] * gain_d[j];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                        dgain[j] += grow[j] * xhat;
                        dbias[j] += grow[j];
                    }
                    let mean_dxhat = sum_dxhat / cn;
                    let mean_dxhat_xhat = sum_dxhat_xhat / cn;
                    for j in 0..c {
                        let xhat = (row[j] - mean) * inv_std;
                        let dxhat = grow[j] * gain_d[j];
                        dx[i * c + j] = inv_std * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
                    }
                }
                self.add_into(g, *x, dx);
                if self.node(*gain).requires_grad {
                    self.add_into(g, *gain, dgain);
                }
                if self.node(*bias).requires_grad {
                    self.add_into(g, *bias, dbias);
                }
            }
            Op::SoftmaxRows { x, mask } => {
                let (r, c) = self.shape(out);
                let s = &self.node(out).data;
                let mut dx = vec![S::zero(); r * c];
                for i in 0..r {
                    let live = |j: usize| mask.as_ref().map_or(true, |m| m[i * c + j]);
                    let mut dot = S::zero();
                    for j in 0..c {
                        if live(j) {
                            dot += gi[i * c + j] * s[i * c + j];
                        }
                    }
                    for j in 0..c {
                        if live(j) {
                            dx[i * c + j] = s[i * c + j] * (gi[i * c + j] - dot);
                        }
                    }
                }
                self.add_into(g, *x, dx);
            }
            Op::ConcatRows { parts } => {
                let (_, c) = self.shape(out);
                let mut row_off = 0;
                for p in parts {
                    let (pr, _) = self.shape(*p);
                    if self.node(*p).requires_grad {
                        let slice = gi[row_off * c..(row_off + pr) * c].to_vec();
                        self.add_into(g, *p, slice);
                    }
                    row_off += pr;
                }
            }
            Op::ConcatCols { parts } => {
                let (r, cols) = self.shape(out);
                let mut col_off = 0;
                for p in parts {
                    let (_, pc) = self.shape(*p);
                    if self.node(*p).requires_grad {
                        let mut dp = vec![S::zero(); r * pc];
                        for i in 0..r {
                            dp[i * pc..(i + 1) * pc].copy_from_slice(
                                &gi[i * cols + col_off..i * cols + col_off + pc],
                            );
                        }
                        self.add_into(g, *p, dp);
                    }
                    col_off += pc;
                }
            }
            Op::SelectRows { a, indices } => {
                let (r, c) = self.shape(*a);
                let mut da = vec![S::zero(); r * c];
                for (k, &src_row) in indices.iter().enumerate() {
                    for j in 0..c {
                        da[src_row * c + j] += gi[k * c + j];
                    }
                }
                self.add_into(g, *a, da);
            }
            Op::SliceCols { a, start, len } => {
                let (r, c) = self.shape(*a);
                let mut da = vec![S::zero(); r * c];
                for i in 0..r {
                    da[i * c + start..i * c + start + len]
                        .copy_from_slice(&gi[i * len..(i + 1) * len]);
                }
                self.add_into(g, *a, da);
            }
            Op::GatherRows { table, ids } => {
                let (v, d) = self.shape(*table);
                let mut dt = vec![S::zero(); v * d];
                for (k, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        dt[id * d + j] += gi[k * d + j];
                    }
                }
                self.add_into(g, *table, dt);
            }
            Op::SumAll { a } => {
                let n = self.node(*a).data.len();
                self.add_into(g, *a, vec![gi[0]; n]);
            }
            Op::MaxAll { a, argmax } => {
                let n = self.node(*a).data.len();
                let mut da = vec![S::zero(); n];
                da[*argmax] = gi[0];
                self.add_into(g, *a, da);
            }
            Op::LogSumExp { a } => {
                let data = &self.node(*a).data;
                let mut m = data[0];
                for v in data {
                    if *v > m {
                        m = *v;
                    }
                }
                let mut sum = S::zero();
                for v in data {
                    sum += (*v - m).exp();
                }
                let da: Vec<S> = data.iter().map(|v| gi[0] * (*v - m).exp() / sum).collect();
                self.add_into(g, *a, da);
            }
        }
    }

    // ── diagnostics ─────────────────────────────────────────────────────

    /// Ids of every softmax node on the tape, in creation order. Lets tests
    /// inspect attention weights without widening the encoder API.
    pub fn softmax_nodes(&self) -> Vec<TensorId> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::SoftmaxRows { .. } => Some(TensorId(i)),
                _ => None,
            })
            .collect()
    }

    /// Over every softmax node on the tape, the worst deviation of a row sum
    /// from 1 (masked entries are exactly 0 and do not disturb the sum).
    /// Returns `(softmax_node_count, max_abs_deviation)`.
    pub fn softmax_row_sum_deviation(&self) -> (usize, f64) {
        let mut count = 0;
        let mut worst = 0.0f64;
        for node in &self.nodes {
            if let Op::SoftmaxRows { .. } = node.op {
                count += 1;
                let c = node.cols();
                for row in node.data.chunks(c) {
                    let mut sum = S::zero();
                    for v in row {
                        sum += *v;
                    }
                    let dev = (sum.to_f64_lossy() - 1.0).abs();
                    if dev > worst {
                        worst = dev;
                    }
                }
            }
        }
        (count, worst)
    }
}
