//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation appends a node holding its forward value and the
//! information its vector-Jacobian product needs. `backward` walks the tape
//! from the loss towards the leaves, accumulating gradients. A `Graph` is
//! built for one forward pass and dropped afterwards; parameters live in a
//! [`ParamStore`] and receive their gradients through
//! [`Graph::backward_into`].

use std::collections::HashMap;
use std::str::FromStr;

use super::params::{ParamId, ParamStore};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    /// tanh approximation of GELU.
    Gelu,
    LeakyRelu(f64),
    Elu(f64),
}

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gelu" => Ok(Activation::Gelu),
            "leaky_relu" => Ok(Activation::LeakyRelu(DEFAULT_LEAKY_SLOPE)),
            "elu" => Ok(Activation::Elu(1.0)),
            other => Err(Error::Config(format!(
                "unknown activation {other:?} (expected gelu, leaky_relu or elu)"
            ))),
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl Activation {
    /// Name accepted by `from_str`; parameters are not part of the name.
    pub fn name(self) -> &'static str {
        match self {
            Activation::Gelu => "gelu",
            Activation::LeakyRelu(_) => "leaky_relu",
            Activation::Elu(_) => "elu",
        }
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()),
            Activation::LeakyRelu(slope) => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Elu(alpha) => {
                if x > 0.0 {
                    x
                } else {
                    alpha * x.exp_m1()
                }
            }
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let inner = GELU_C * (x + GELU_A * x * x * x);
                let t = inner.tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
            }
            Activation::LeakyRelu(slope) => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Elu(alpha) => {
                if x > 0.0 {
                    1.0
                } else {
                    alpha * x.exp()
                }
            }
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    MatMul {
        a: Var,
        b: Var,
    },
    MatMulNt {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        factor: f64,
    },
    AddRow {
        x: Var,
        row: Var,
    },
    OuterSum {
        col: Var,
        row: Var,
    },
    Softmax {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        offset: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Act {
        x: Var,
        kind: Activation,
    },
    Conv1d {
        seq: Var,
        kernel: Var,
    },
    Deconv1d {
        seq: Var,
        kernel: Var,
    },
    MaxRows {
        x: Var,
        argmax: Vec<usize>,
    },
    ConcatCols {
        parts: Vec<Var>,
    },
    ConcatRows {
        parts: Vec<Var>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    GatherRows {
        table: Var,
        indices: Vec<usize>,
    },
    RepeatRows {
        x: Var,
    },
    Reshape {
        x: Var,
    },
    Sum {
        x: Var,
    },
    SmoothedCrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        smoothing: f64,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

fn require_rank2(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    if t.rank() != 2 {
        return Err(Error::dim(format!(
            "{what} expects a matrix, got shape {:?}",
            t.shape()
        )));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

fn check_finite(data: &[f64], what: &str) -> Result<()> {
    if data.iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric(format!("NaN input to {what}")));
    }
    Ok(())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// A leaf that receives no gradient outside the graph.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Brings a stored parameter onto the tape. Repeated calls return the
    /// same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let src = store.get(id);
        let value = Tensor::new(src.shape().to_vec(), src.data().to_vec())
            .expect("stored parameter is well formed");
        let v = self.push(value, Op::Param);
        self.params.insert(id, v);
        v
    }

    /// `x · wᵀ (+ b)` for `x: n×a`, `w: b×a`, `b: [b]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (n, a) = require_rank2(self.value(x), "linear input")?;
        let (out, a2) = require_rank2(self.value(w), "linear weight")?;
        if a != a2 {
            return Err(Error::dim(format!(
                "linear: input {:?} incompatible with weight {:?}",
                self.shape(x),
                self.shape(w)
            )));
        }
        if let Some(b) = b {
            if self.value(b).numel() != out {
                return Err(Error::dim(format!(
                    "linear: bias {:?} does not match weight {:?}",
                    self.shape(b),
                    self.shape(w)
                )));
            }
        }
        let mut data = matmul_nt(self.value(x).data(), self.value(w).data(), n, a, out);
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in data.chunks_mut(out) {
                for (v, bb) in row.iter_mut().zip(bias) {
                    *v += bb;
                }
            }
        }
        let value = Tensor::new(vec![n, out], data)?;
        Ok(self.push(value, Op::Linear { x, w, b }))
    }

    /// `a · b` for `a: n×k`, `b: k×m`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = require_rank2(self.value(a), "matmul lhs")?;
        let (k2, m) = require_rank2(self.value(b), "matmul rhs")?;
        if k != k2 {
            return Err(Error::dim(format!(
                "matmul: {:?} · {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data = matmul(self.value(a).data(), self.value(b).data(), n, k, m);
        let value = Tensor::new(vec![n, m], data)?;
        Ok(self.push(value, Op::MatMul { a, b }))
    }

    /// `a · bᵀ` for `a: n×k`, `b: m×k`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = require_rank2(self.value(a), "matmul_nt lhs")?;
        let (m, k2) = require_rank2(self.value(b), "matmul_nt rhs")?;
        if k != k2 {
            return Err(Error::dim(format!(
                "matmul_nt: {:?} · {:?}ᵀ",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data = matmul_nt(self.value(a).data(), self.value(b).data(), n, k, m);
        let value = Tensor::new(vec![n, m], data)?;
        Ok(self.push(value, Op::MatMulNt { a, b }))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let va = self.value(a);
        let data = va
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        Tensor::new(va.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let value = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(value, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let value = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(value, Op::Sub { a, b }))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let value = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(value, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|v| v * factor).collect();
        let value = Tensor::new(src.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Scale { x, factor })
    }

    /// Adds a length-`m` vector to every row of an `n×m` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (_, m) = require_rank2(self.value(x), "add_row")?;
        if self.value(row).numel() != m {
            return Err(Error::dim(format!(
                "add_row: row {:?} does not broadcast over {:?}",
                self.shape(row),
                self.shape(x)
            )));
        }
        let r = self.value(row).data().to_vec();
        let src = self.value(x);
        let mut data = src.data().to_vec();
        for chunk in data.chunks_mut(m) {
            for (v, rr) in chunk.iter_mut().zip(&r) {
                *v += rr;
            }
        }
        let value = Tensor::new(src.shape().to_vec(), data)?;
        Ok(self.push(value, Op::AddRow { x, row }))
    }

    /// `out[i][j] = col[i] + row[j]`.
    pub fn outer_sum(&mut self, col: Var, row: Var) -> Var {
        let c = self.value(col).data();
        let r = self.value(row).data();
        let (n, m) = (c.len(), r.len());
        let mut data = Vec::with_capacity(n * m);
        for ci in c {
            data.extend(r.iter().map(|rj| ci + rj));
        }
        let value = Tensor::new(vec![n, m], data).expect("outer shape");
        self.push(value, Op::OuterSum { col, row })
    }

    /// Softmax along `axis` with max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let src = self.value(x);
        if axis >= src.rank() {
            return Err(Error::dim(format!(
                "softmax axis {axis} out of range for {:?}",
                src.shape()
            )));
        }
        check_finite(src.data(), "softmax")?;
        let shape = src.shape();
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut data = src.data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                let max = (0..len).map(|j| data[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..len {
                    let e = (data[at(j)] - max).exp();
                    data[at(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    data[at(j)] /= total;
                }
            }
        }
        let value = Tensor::new(shape.to_vec(), data)?;
        Ok(self.push(
            value,
            Op::Softmax {
                x,
                outer,
                len,
                inner,
            },
        ))
    }

    /// Softmax over the last axis where `mask[i] == false` entries receive
    /// zero probability. Every row needs at least one unmasked entry.
    pub fn masked_softmax_rows(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let src = self.value(x);
        if mask.len() != src.numel() {
            return Err(Error::dim("softmax mask does not match scores"));
        }
        check_finite(src.data(), "softmax")?;
        let cols = src.cols();
        let mut data = src.data().to_vec();
        for (row, keep) in data.chunks_mut(cols).zip(mask.chunks(cols)) {
            let max = row
                .iter()
                .zip(keep)
                .filter(|(_, k)| **k)
                .map(|(v, _)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::Numeric("softmax row is fully masked".into()));
            }
            let mut total = 0.0;
            for (v, k) in row.iter_mut().zip(keep) {
                *v = if *k { (*v - max).exp() } else { 0.0 };
                total += *v;
            }
            row.iter_mut().for_each(|v| *v /= total);
        }
        let value = Tensor::new(src.shape().to_vec(), data)?;
        let len = value.cols();
        let outer = value.rows();
        Ok(self.push(
            value,
            Op::Softmax {
                x,
                outer,
                len,
                inner: 1,
            },
        ))
    }

    /// Row-wise layer normalization with affine gain/offset.
    pub fn layer_norm(&mut self, x: Var, gain: Var, offset: Var, eps: f64) -> Result<Var> {
        let src = self.value(x);
        let d = src.cols();
        if d == 0 || src.rank() == 0 {
            return Err(Error::dim("layer_norm over an empty feature axis"));
        }
        if self.value(gain).numel() != d || self.value(offset).numel() != d {
            return Err(Error::dim(format!(
                "layer_norm: gain/offset must have {d} entries"
            )));
        }
        let g = self.value(gain).data().to_vec();
        let b = self.value(offset).data().to_vec();
        let src = self.value(x);
        let mut normalized = Vec::with_capacity(src.numel());
        let mut inv_std = Vec::with_capacity(src.rows());
        let mut out = Vec::with_capacity(src.numel());
        for row in src.data().chunks(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rstd = 1.0 / (var + eps).sqrt();
            inv_std.push(rstd);
            for (j, v) in row.iter().enumerate() {
                let n = (v - mean) * rstd;
                normalized.push(n);
                out.push(g[j] * n + b[j]);
            }
        }
        let value = Tensor::new(src.shape().to_vec(), out)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                offset,
                normalized,
                inv_std,
            },
        ))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|v| kind.apply(*v)).collect();
        let value = Tensor::new(src.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Act { x, kind })
    }

    /// Depthwise 1-D convolution with a single kernel shared by all channels:
    /// `out[t] = Σ_j kernel[j] · seq[t + j]`.
    pub fn conv1d_depthwise(&mut self, seq: Var, kernel: Var) -> Result<Var> {
        let (m, d) = require_rank2(self.value(seq), "conv1d input")?;
        let l = self.value(kernel).numel();
        if l == 0 || m < l {
            return Err(Error::dim(format!(
                "conv1d: sequence of length {m} is shorter than kernel of length {l}"
            )));
        }
        let out_len = m - l + 1;
        let k = self.value(kernel).data();
        let s = self.value(seq).data();
        let mut data = vec![0.0; out_len * d];
        for t in 0..out_len {
            for (j, kj) in k.iter().enumerate() {
                let src = &s[(t + j) * d..(t + j + 1) * d];
                for (o, v) in data[t * d..(t + 1) * d].iter_mut().zip(src) {
                    *o += kj * v;
                }
            }
        }
        let value = Tensor::new(vec![out_len, d], data)?;
        Ok(self.push(value, Op::Conv1d { seq, kernel }))
    }

    /// Transposed (adjoint) depthwise convolution: maps `(m−l+1)×d` rows to
    /// `m×d` through the banded matrix whose column `t` holds the kernel
    /// starting at row `t`.
    pub fn deconv1d_depthwise(&mut self, seq: Var, kernel: Var) -> Result<Var> {
        let (n, d) = require_rank2(self.value(seq), "deconv1d input")?;
        let l = self.value(kernel).numel();
        if l == 0 || n == 0 {
            return Err(Error::dim(format!(
                "deconv1d: need a non-empty input and kernel, got {n} rows and kernel length {l}"
            )));
        }
        let m = n + l - 1;
        let k = self.value(kernel).data();
        let s = self.value(seq).data();
        let mut data = vec![0.0; m * d];
        for t in 0..n {
            for (j, kj) in k.iter().enumerate() {
                let src = &s[t * d..(t + 1) * d];
                for (o, v) in data[(t + j) * d..(t + j + 1) * d].iter_mut().zip(src) {
                    *o += kj * v;
                }
            }
        }
        let value = Tensor::new(vec![m, d], data)?;
        Ok(self.push(value, Op::Deconv1d { seq, kernel }))
    }

    /// Column-wise maximum over rows: `n×d → 1×d`.
    pub fn max_rows(&mut self, x: Var) -> Result<Var> {
        let (n, d) = require_rank2(self.value(x), "max_rows")?;
        if n == 0 {
            return Err(Error::dim("max_rows over zero rows"));
        }
        let s = self.value(x).data();
        let mut argmax = vec![0usize; d];
        let mut data = s[..d].to_vec();
        for t in 1..n {
            for c in 0..d {
                if s[t * d + c] > data[c] {
                    data[c] = s[t * d + c];
                    argmax[c] = t;
                }
            }
        }
        let value = Tensor::new(vec![1, d], data)?;
        Ok(self.push(value, Op::MaxRows { x, argmax }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let n = self.value(parts[0]).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = require_rank2(self.value(p), "concat_cols")?;
            if r != n {
                return Err(Error::dim(format!(
                    "concat_cols: row counts {n} and {r} differ"
                )));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(n * total);
        for i in 0..n {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let value = Tensor::new(vec![n, total], data)?;
        Ok(self.push(
            value,
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let d = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = require_rank2(self.value(p), "concat_rows")?;
            if c != d {
                return Err(Error::dim(format!(
                    "concat_rows: column counts {d} and {c} differ"
                )));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::new(vec![rows, d], data)?;
        Ok(self.push(
            value,
            Op::ConcatRows {
                parts: parts.to_vec(),
            },
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, d) = require_rank2(self.value(x), "slice_cols")?;
        if start + len > d {
            return Err(Error::dim(format!(
                "slice_cols {start}..{} out of {d}",
                start + len
            )));
        }
        let s = self.value(x);
        let mut data = Vec::with_capacity(n * len);
        for i in 0..n {
            data.extend_from_slice(&s.row(i)[start..start + len]);
        }
        let value = Tensor::new(vec![n, len], data)?;
        Ok(self.push(value, Op::SliceCols { x, start }))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, d) = require_rank2(self.value(x), "slice_rows")?;
        if start + len > n {
            return Err(Error::dim(format!(
                "slice_rows {start}..{} out of {n}",
                start + len
            )));
        }
        let data = self.value(x).data()[start * d..(start + len) * d].to_vec();
        let value = Tensor::new(vec![len, d], data)?;
        Ok(self.push(value, Op::SliceRows { x, start }))
    }

    /// Embedding lookup: row `indices[i]` of `table` becomes output row `i`.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let (n, d) = require_rank2(self.value(table), "gather_rows")?;
        if let Some(bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::dim(format!(
                "gather_rows: index {bad} out of {n} rows"
            )));
        }
        let t = self.value(table);
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(t.row(i));
        }
        let value = Tensor::new(vec![indices.len(), d], data)?;
        Ok(self.push(
            value,
            Op::GatherRows {
                table,
                indices: indices.to_vec(),
            },
        ))
    }

    /// Stacks a single row `n` times.
    pub fn repeat_rows(&mut self, x: Var, n: usize) -> Result<Var> {
        let (r, d) = require_rank2(self.value(x), "repeat_rows")?;
        if r != 1 {
            return Err(Error::dim("repeat_rows expects a single row"));
        }
        let row = self.value(x).data().to_vec();
        let data = row.iter().copied().cycle().take(n * d).collect();
        let value = Tensor::new(vec![n, d], data)?;
        Ok(self.push(value, Op::RepeatRows { x }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let src = self.value(x);
        let value = Tensor::new(shape.to_vec(), src.data().to_vec())?;
        Ok(self.push(value, Op::Reshape { x }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum { x })
    }

    /// Sum over rows of the label-smoothed cross-entropy between
    /// `softmax(logits)` and `q = (1−ε)·onehot(target) + ε/V`. Rows whose
    /// target is `None` are skipped.
    pub fn smoothed_cross_entropy(
        &mut self,
        logits: Var,
        targets: &[Option<usize>],
        smoothing: f64,
    ) -> Result<Var> {
        let (n, v) = require_rank2(self.value(logits), "cross_entropy")?;
        if targets.len() != n {
            return Err(Error::dim(format!(
                "cross_entropy: {} targets for {n} rows",
                targets.len()
            )));
        }
        if let Some(bad) = targets.iter().flatten().find(|&&t| t >= v) {
            return Err(Error::dim(format!("target id {bad} out of vocabulary {v}")));
        }
        let src = self.value(logits).data();
        check_finite(src, "cross_entropy")?;
        let mut probs = Vec::with_capacity(n * v);
        let mut loss = 0.0;
        for (row, target) in src.chunks(v).zip(targets) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
            probs.extend(row.iter().map(|z| (z - lse).exp()));
            if let Some(t) = target {
                let mean_logp = row.iter().map(|z| z - lse).sum::<f64>() / v as f64;
                loss -= (1.0 - smoothing) * (row[*t] - lse) + smoothing * mean_logp;
            }
        }
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SmoothedCrossEntropy {
                logits,
                targets: targets.to_vec(),
                smoothing,
                probs,
            },
        ))
    }

    /// Gradients of scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &gout, &mut grads);
            grads[idx] = Some(gout);
        }
        Ok(Gradients { grads })
    }

    /// Runs `backward` and adds parameter gradients into `store`.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.backward(loss)?;
        for (&id, &var) in &self.params {
            if let Some(g) = grads.wrt(var) {
                store.get_mut(id).accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    /// Parameter gradients of `loss`, sorted by parameter id, without
    /// touching the store.
    pub fn param_grads(&self, loss: Var) -> Result<Vec<(ParamId, Vec<f64>)>> {
        let mut grads = self.backward(loss)?;
        let mut out: Vec<(ParamId, Vec<f64>)> = self
            .params
            .iter()
            .filter_map(|(&id, &var)| grads.grads[var.0].take().map(|g| (id, g)))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        Ok(out)
    }

    fn propagate(&self, idx: usize, gout: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            let numel = self.nodes[v.0].value.numel();
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; numel]);
            f(slot);
        };
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Linear { x, w, b } => {
                let (n, a) = (self.value(*x).shape()[0], self.value(*x).shape()[1]);
                let out = self.value(*w).shape()[0];
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                acc(*x, &mut |g| add_into(g, &matmul(gout, wv, n, out, a)));
                acc(*w, &mut |g| add_into(g, &matmul_tn(gout, xv, n, out, a)));
                if let Some(b) = b {
                    acc(*b, &mut |g| {
                        for row in gout.chunks(out) {
                            add_into(g, row);
                        }
                    });
                }
            }
            Op::MatMul { a, b } => {
                let (n, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let m = self.shape(*b)[1];
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                acc(*a, &mut |g| add_into(g, &matmul_nt(gout, bv, n, m, k)));
                acc(*b, &mut |g| add_into(g, &matmul_tn(av, gout, n, k, m)));
            }
            Op::MatMulNt { a, b } => {
                let (n, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let m = self.shape(*b)[0];
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                acc(*a, &mut |g| add_into(g, &matmul(gout, bv, n, m, k)));
                acc(*b, &mut |g| add_into(g, &matmul_tn(gout, av, n, m, k)));
            }
            Op::Add { a, b } => {
                acc(*a, &mut |g| add_into(g, gout));
                acc(*b, &mut |g| add_into(g, gout));
            }
            Op::Sub { a, b } => {
                acc(*a, &mut |g| add_into(g, gout));
                acc(*b, &mut |g| g.iter_mut().zip(gout).for_each(|(x, y)| *x -= y));
            }
            Op::Mul { a, b } => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                acc(*a, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += gout[i] * bv[i];
                    }
                });
                acc(*b, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += gout[i] * av[i];
                    }
                });
            }
            Op::Scale { x, factor } => {
                acc(*x, &mut |g| {
                    g.iter_mut().zip(gout).for_each(|(x, y)| *x += factor * y)
                });
            }
            Op::AddRow { x, row } => {
                let m = self.value(*x).cols();
                acc(*x, &mut |g| add_into(g, gout));
                acc(*row, &mut |g| {
                    for chunk in gout.chunks(m) {
                        add_into(g, chunk);
                    }
                });
            }
            Op::OuterSum { col, row } => {
                let m = self.value(*row).numel();
                acc(*col, &mut |g| {
                    for (gi, chunk) in g.iter_mut().zip(gout.chunks(m)) {
                        *gi += chunk.iter().sum::<f64>();
                    }
                });
                acc(*row, &mut |g| {
                    for chunk in gout.chunks(m) {
                        add_into(g, chunk);
                    }
                });
            }
            Op::Softmax {
                x,
                outer,
                len,
                inner,
            } => {
                let y = node.value.data();
                acc(*x, &mut |g| {
                    for o in 0..*outer {
                        for i in 0..*inner {
                            let at = |j: usize| o * len * inner + j * inner + i;
                            let dot: f64 = (0..*len).map(|j| gout[at(j)] * y[at(j)]).sum();
                            for j in 0..*len {
                                g[at(j)] += y[at(j)] * (gout[at(j)] - dot);
                            }
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                offset,
                normalized,
                inv_std,
            } => {
                let d = node.value.cols();
                let gv = self.value(*gain).data();
                acc(*x, &mut |g| {
                    for (r, rstd) in inv_std.iter().enumerate() {
                        let span = r * d..(r + 1) * d;
                        let dy: Vec<f64> =
                            gout[span.clone()].iter().zip(gv).map(|(a, b)| a * b).collect();
                        let xhat = &normalized[span.clone()];
                        let sum_dy: f64 = dy.iter().sum();
                        let sum_dy_xhat: f64 = dy.iter().zip(xhat).map(|(a, b)| a * b).sum();
                        for j in 0..d {
                            g[r * d + j] += rstd / d as f64
                                * (d as f64 * dy[j] - sum_dy - xhat[j] * sum_dy_xhat);
                        }
                    }
                });
                acc(*gain, &mut |g| {
                    for (go, xh) in gout.chunks(d).zip(normalized.chunks(d)) {
                        for j in 0..d {
                            g[j] += go[j] * xh[j];
                        }
                    }
                });
                acc(*offset, &mut |g| {
                    for go in gout.chunks(d) {
                        add_into(g, go);
                    }
                });
            }
            Op::Act { x, kind } => {
                let xv = self.value(*x).data();
                acc(*x, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += gout[i] * kind.derivative(xv[i]);
                    }
                });
            }
            Op::Conv1d { seq, kernel } => {
                let d = self.value(*seq).cols();
                let k = self.value(*kernel).data();
                let s = self.value(*seq).data();
                let out_len = node.value.rows();
                acc(*seq, &mut |g| {
                    for t in 0..out_len {
                        for (j, kj) in k.iter().enumerate() {
                            for c in 0..d {
                                g[(t + j) * d + c] += kj * gout[t * d + c];
                            }
                        }
                    }
                });
                acc(*kernel, &mut |g| {
                    for t in 0..out_len {
                        for (j, gj) in g.iter_mut().enumerate() {
                            for c in 0..d {
                                *gj += s[(t + j) * d + c] * gout[t * d + c];
                            }
                        }
                    }
                });
            }
            Op::Deconv1d { seq, kernel } => {
                let d = self.value(*seq).cols();
                let n = self.value(*seq).rows();
                let k = self.value(*kernel).data();
                let s = self.value(*seq).data();
                acc(*seq, &mut |g| {
                    for t in 0..n {
                        for (j, kj) in k.iter().enumerate() {
                            for c in 0..d {
                                g[t * d + c] += kj * gout[(t + j) * d + c];
                            }
                        }
                    }
                });
                acc(*kernel, &mut |g| {
                    for t in 0..n {
                        for (j, gj) in g.iter_mut().enumerate() {
                            for c in 0..d {
                                *gj += s[t * d + c] * gout[(t + j) * d + c];
                            }
                        }
                    }
                });
            }
            Op::MaxRows { x, argmax } => {
                let d = argmax.len();
                acc(*x, &mut |g| {
                    for (c, &t) in argmax.iter().enumerate() {
                        g[t * d + c] += gout[c];
                    }
                });
            }
            Op::ConcatCols { parts } => {
                let n = node.value.rows();
                let total = node.value.cols();
                let mut start = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    acc(p, &mut |g| {
                        for i in 0..n {
                            add_into(
                                &mut g[i * w..(i + 1) * w],
                                &gout[i * total + start..i * total + start + w],
                            );
                        }
                    });
                    start += w;
                }
            }
            Op::ConcatRows { parts } => {
                let mut start = 0;
                for &p in parts {
                    let len = self.value(p).numel();
                    acc(p, &mut |g| add_into(g, &gout[start..start + len]));
                    start += len;
                }
            }
            Op::SliceCols { x, start } => {
                let d = self.value(*x).cols();
                let w = node.value.cols();
                acc(*x, &mut |g| {
                    for (i, chunk) in gout.chunks(w).enumerate() {
                        add_into(&mut g[i * d + start..i * d + start + w], chunk);
                    }
                });
            }
            Op::SliceRows { x, start } => {
                let d = self.value(*x).cols();
                acc(*x, &mut |g| {
                    add_into(&mut g[start * d..start * d + gout.len()], gout);
                });
            }
            Op::GatherRows { table, indices } => {
                let d = self.value(*table).cols();
                acc(*table, &mut |g| {
                    for (r, &i) in indices.iter().enumerate() {
                        add_into(&mut g[i * d..(i + 1) * d], &gout[r * d..(r + 1) * d]);
                    }
                });
            }
            Op::RepeatRows { x } => {
                let d = self.value(*x).cols();
                acc(*x, &mut |g| {
                    for chunk in gout.chunks(d) {
                        add_into(g, chunk);
                    }
                });
            }
            Op::Reshape { x } => acc(*x, &mut |g| add_into(g, gout)),
            Op::Sum { x } => acc(*x, &mut |g| g.iter_mut().for_each(|v| *v += gout[0])),
            Op::SmoothedCrossEntropy {
                logits,
                targets,
                smoothing,
                probs,
            } => {
                let v = self.value(*logits).cols();
                let off = smoothing / v as f64;
                acc(*logits, &mut |g| {
                    for (r, target) in targets.iter().enumerate() {
                        let Some(t) = target else { continue };
                        for j in 0..v {
                            let q = off + if j == *t { 1.0 - smoothing } else { 0.0 };
                            g[r * v + j] += gout[0] * (probs[r * v + j] - q);
                        }
                    }
                });
            }
        }
    }
}

/// Per-node gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// `a (n×k) · b (k×m)`.
pub(crate) fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            for (o, bv) in row.iter_mut().zip(&b[p * m..(p + 1) * m]) {
                *o += aip * bv;
            }
        }
    }
    out
}

/// `a (n×k) · b (m×k)ᵀ`.
pub(crate) fn matmul_nt(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let ar = &a[i * k..(i + 1) * k];
        for j in 0..m {
            let br = &b[j * k..(j + 1) * k];
            out[i * m + j] = ar.iter().zip(br).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `a (n×k)ᵀ · b (n×m)`, giving `k×m`.
pub(crate) fn matmul_tn(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * m];
    for i in 0..n {
        let br = &b[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            for (o, bv) in out[p * m..(p + 1) * m].iter_mut().zip(br) {
                *o += aip * bv;
            }
        }
    }
    out
}

/// Dense `(m−l+1)×m` matrix of the convolution with `kernel`.
pub fn conv_matrix(kernel: &[f64], m: usize) -> Result<Tensor> {
    let l = kernel.len();
    if l == 0 || m < l {
        return Err(Error::dim(format!(
            "no conv matrix for length {m}, kernel {l}"
        )));
    }
    let rows = m - l + 1;
    let mut t = Tensor::zeros(&[rows, m]);
    for r in 0..rows {
        for (j, kj) in kernel.iter().enumerate() {
            t.data_mut()[r * m + r + j] = *kj;
        }
    }
    Ok(t)
}

/// Dense `m×(m−l+1)` banded deconvolution matrix `Z_D` built column by column.
pub fn deconv_matrix(kernel: &[f64], m: usize) -> Result<Tensor> {
    let l = kernel.len();
    if l == 0 || m < l {
        return Err(Error::dim(format!(
            "no deconv matrix for length {m}, kernel {l}"
        )));
    }
    let cols = m - l + 1;
    let mut t = Tensor::zeros(&[m, cols]);
    for c in 0..cols {
        for (j, kj) in kernel.iter().enumerate() {
            t.data_mut()[(c + j) * cols + c] = *kj;
        }
    }
    Ok(t)
}
