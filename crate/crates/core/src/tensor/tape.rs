//! Wengert-style tape: every op appends a node holding its output value and
//! enough saved state to replay the chain rule in reverse.
//!
//! The tape is rebuilt for every forward pass. Parameters enter as leaves
//! copied out of a [`ParamStore`]; their gradients are pulled back into the
//! store with [`ParamStore::accumulate_grads`].

use std::collections::HashMap;

use rand::Rng;

use super::kernels::{dot, matmul_nn, matmul_nt, matmul_tn};
use super::{ParamId, ParamStore, Real, Result, Tensor, TensorError};

const LN_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
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
    ParamRows {
        id: ParamId,
        rows: Vec<usize>,
    },
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
    RowDot {
        q: Var,
        g: Var,
    },
    RowWeightedSum {
        w: Var,
        g: Var,
    },
    ConcatCols(Vec<Var>),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

#[derive(Debug)]
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
    nan_detected: bool,
    relu_signature: u64,
    params: HashMap<ParamId, Var>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn broadcasts(big: &[usize], small: &[usize]) -> bool {
    small.len() <= big.len() && big[big.len() - small.len()..] == *small
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grad_enabled: true,
            nan_detected: false,
            relu_signature: 0xcbf2_9ce4_8422_2325,
            params: HashMap::new(),
        }
    }

    /// A tape that records values only. Nothing on it requires a gradient,
    /// which is how frozen models are run.
    pub fn no_grad() -> Self {
        Tape {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn is_grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of a leaf after [`Tape::backward`]. `None` until a backward
    /// pass reaches it, and always `None` for leaves that do not require one.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Set once any softmax saw a non-finite input.
    pub fn nan_detected(&self) -> bool {
        self.nan_detected
    }

    /// Hash of every ReLU activation pattern recorded so far. Finite
    /// difference checks compare it between the two probes to detect kinks.
    pub fn relu_signature(&self) -> u64 {
        self.relu_signature
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, inputs: &[Var]) -> bool {
        self.grad_enabled && inputs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        let rg = self.grad_enabled;
        self.push(value, Op::Leaf, rg)
    }

    /// Binds a parameter as a leaf. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let rg = self.grad_enabled;
        let v = self.push(store.value(id).clone(), Op::Param(id), rg);
        self.params.insert(id, v);
        v
    }

    /// Gathers rows of a rank-2 parameter without copying the whole table.
    /// Used for embedding lookup.
    pub fn param_rows(&mut self, store: &ParamStore<T>, id: ParamId, rows: &[usize]) -> Result<Var> {
        let table = store.value(id);
        let (r, c) = table.dims2()?;
        let mut out = Vec::with_capacity(rows.len() * c);
        for &row in rows {
            if row >= r {
                return Err(TensorError::IndexOutOfRange {
                    op: "param_rows",
                    index: row,
                    bound: r,
                });
            }
            out.extend_from_slice(table.row(row));
        }
        let value = Tensor::new([rows.len(), c], out)?;
        let rg = self.grad_enabled;
        Ok(self.push(
            value,
            Op::ParamRows {
                id,
                rows: rows.to_vec(),
            },
            rg,
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a);
        let bv = self.value(b);
        let (m, k) = av.dims2()?;
        let (k2, n) = bv.dims2()?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let mut out = vec![T::zero(); m * n];
        matmul_nn(av.data(), bv.data(), &mut out, m, k, n);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new([m, n], out)?, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).transpose2()?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(t, Op::Transpose(x), rg))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op,
    ) -> Result<Var> {
        let av = self.value(a);
        let bv = self.value(b);
        if !broadcasts(av.shape(), bv.shape()) {
            return Err(TensorError::ShapeMismatch {
                op: name,
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let bd = bv.data();
        let nb = bd.len();
        let out: Vec<T> = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, bd[i % nb]))
            .collect();
        let value = Tensor::new(av.shape().to_vec(), out)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    /// `a + b`, where `b` may broadcast over the leading dimensions of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let cv = T::from_f64(c);
        let value = Tensor::new(
            self.value(x).shape().to_vec(),
            self.value(x).data().iter().map(|&v| v * cv).collect(),
        )
        .expect("same shape");
        let rg = self.any_grad(&[x]);
        self.push(value, Op::Scale(x, c), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut sig = self.relu_signature;
        let out: Vec<T> = xv
            .data()
            .iter()
            .map(|&v| {
                let on = v > T::zero();
                sig = (sig ^ on as u64).wrapping_mul(0x0100_0000_01b3);
                if on {
                    v
                } else {
                    T::zero()
                }
            })
            .collect();
        let value = Tensor::new(xv.shape().to_vec(), out).expect("same shape");
        self.relu_signature = sig;
        let rg = self.any_grad(&[x]);
        self.push(value, Op::Relu(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let value = Tensor::new(
            xv.shape().to_vec(),
            xv.data().iter().map(|&v| v.tanh()).collect(),
        )
        .expect("same shape");
        let rg = self.any_grad(&[x]);
        self.push(value, Op::Tanh(x), rg)
    }

    /// Softmax over the last dimension.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        self.softmax_impl(x, None)
    }

    /// Softmax over the last dimension restricted to entries where `keep`
    /// is true. Masked entries come out exactly zero; a fully masked row is
    /// all zeros.
    pub fn softmax_rows_masked(&mut self, x: Var, keep: &[bool]) -> Result<Var> {
        let n = self.value(x).numel();
        if keep.len() != n {
            return Err(TensorError::ShapeMismatch {
                op: "softmax_rows_masked",
                left: self.value(x).shape().to_vec(),
                right: vec![keep.len()],
            });
        }
        Ok(self.softmax_impl(x, Some(keep)))
    }

    fn softmax_impl(&mut self, x: Var, keep: Option<&[bool]>) -> Var {
        let xv = self.value(x);
        let cols = *xv.shape().last().expect("rank >= 1");
        let data = xv.data();
        let mut out = vec![T::zero(); data.len()];
        let mut saw_nan = false;
        let mut exps = vec![0.0f64; cols];
        for (r, row) in data.chunks(cols).enumerate() {
            let kept = |j: usize| keep.map_or(true, |k| k[r * cols + j]);
            let mut max = f64::NEG_INFINITY;
            let mut any = false;
            for (j, &v) in row.iter().enumerate() {
                if kept(j) {
                    let v = v.as_f64();
                    if !v.is_finite() {
                        saw_nan = true;
                    }
                    any = true;
                    max = if v.is_nan() { v } else { max.max(v) };
                }
            }
            if !any {
                continue;
            }
            let mut sum = 0.0f64;
            for (j, &v) in row.iter().enumerate() {
                exps[j] = if kept(j) { (v.as_f64() - max).exp() } else { 0.0 };
                sum += exps[j];
            }
            for j in 0..cols {
                out[r * cols + j] = T::from_f64(exps[j] / sum);
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out).expect("same shape");
        self.nan_detected |= saw_nan;
        let rg = self.any_grad(&[x]);
        self.push(value, Op::Softmax(x), rg)
    }

    /// Normalizes each row to zero mean and unit variance, then applies
    /// `gain` and `bias` (both of length equal to the last dimension).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let d = *xv.shape().last().expect("rank >= 1");
        for p in [gain, bias] {
            if self.value(p).shape() != [d] {
                return Err(TensorError::ShapeMismatch {
                    op: "layer_norm",
                    left: xv.shape().to_vec(),
                    right: self.value(p).shape().to_vec(),
                });
            }
        }
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let rows = xv.numel() / d;
        let mut xhat = vec![0.0f64; xv.numel()];
        let mut inv_std = vec![0.0f64; rows];
        let mut out = vec![T::zero(); xv.numel()];
        for (r, row) in xv.data().chunks(d).enumerate() {
            let mean = row.iter().map(|v| v.as_f64()).sum::<f64>() / d as f64;
            let var = row
                .iter()
                .map(|v| (v.as_f64() - mean).powi(2))
                .sum::<f64>()
                / d as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j].as_f64() - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = T::from_f64(h * g[j].as_f64() + b[j].as_f64());
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        let rg = self.any_grad(&[x, gain, bias]);
        let (xhat, inv_std) = if rg { (xhat, inv_std) } else { (Vec::new(), Vec::new()) };
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let (n, c) = lv.dims2()?;
        if labels.len() != n {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                left: lv.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        let mut probs = vec![0.0f64; n * c];
        let mut total = 0.0f64;
        for (r, row) in lv.data().chunks(c).enumerate() {
            let label = labels[r];
            if label >= c {
                return Err(TensorError::IndexOutOfRange {
                    op: "cross_entropy",
                    index: label,
                    bound: c,
                });
            }
            let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v.as_f64() - max).exp()).sum();
            let lse = max + sum.ln();
            total += lse - row[label].as_f64();
            for j in 0..c {
                probs[r * c + j] = (row[j].as_f64() - lse).exp();
            }
        }
        let value = Tensor::scalar(T::from_f64(total / n as f64));
        let rg = self.any_grad(&[logits]);
        Ok(self.push(
            value,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Selects rows of the matrix `x` by `idx`. The result has shape
    /// `leading ++ [cols]`, where `leading` multiplies out to `idx.len()`.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize], leading: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = xv.dims2()?;
        if leading.iter().product::<usize>() != idx.len() {
            return Err(TensorError::InvalidShape {
                shape: leading.to_vec(),
                len: idx.len(),
            });
        }
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= r {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather_rows",
                    index: i,
                    bound: r,
                });
            }
            out.extend_from_slice(xv.row(i));
        }
        let mut shape = leading.to_vec();
        shape.push(c);
        let value = Tensor::new(shape, out)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(
            value,
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    /// `out[i, k] = q[i, :] · g[i, k, :]` for `q: [n×c]`, `g: [n×K×c]`.
    pub fn row_dot(&mut self, q: Var, g: Var) -> Result<Var> {
        let (n, kk, c) = self.row_batch_dims("row_dot", q, g)?;
        let qd = self.value(q).data();
        let gd = self.value(g).data();
        let mut out = vec![T::zero(); n * kk];
        for i in 0..n {
            let qi = &qd[i * c..(i + 1) * c];
            for k in 0..kk {
                let off = (i * kk + k) * c;
                out[i * kk + k] = T::from_f64(dot(qi, &gd[off..off + c]));
            }
        }
        let value = Tensor::new([n, kk], out)?;
        let rg = self.any_grad(&[q, g]);
        Ok(self.push(value, Op::RowDot { q, g }, rg))
    }

    /// `out[i, :] = Σ_k w[i, k] · g[i, k, :]` for `w: [n×K]`, `g: [n×K×c]`.
    pub fn row_weighted_sum(&mut self, w: Var, g: Var) -> Result<Var> {
        let wv = self.value(w);
        let gv = self.value(g);
        let (n, kk) = wv.dims2()?;
        let c = match gv.shape() {
            &[a, b, c] if a == n && b == kk => c,
            _ => {
                return Err(TensorError::ShapeMismatch {
                    op: "row_weighted_sum",
                    left: wv.shape().to_vec(),
                    right: gv.shape().to_vec(),
                })
            }
        };
        let wd = wv.data();
        let gd = gv.data();
        let mut acc = vec![0.0f64; c];
        let mut out = vec![T::zero(); n * c];
        for i in 0..n {
            acc.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..kk {
                let wik = wd[i * kk + k].as_f64();
                if wik == 0.0 {
                    continue;
                }
                let off = (i * kk + k) * c;
                for (a, &gv) in acc.iter_mut().zip(&gd[off..off + c]) {
                    *a += wik * gv.as_f64();
                }
            }
            for (o, &a) in out[i * c..(i + 1) * c].iter_mut().zip(&acc) {
                *o = T::from_f64(a);
            }
        }
        let value = Tensor::new([n, c], out)?;
        let rg = self.any_grad(&[w, g]);
        Ok(self.push(value, Op::RowWeightedSum { w, g }, rg))
    }

    fn row_batch_dims(&self, op: &'static str, q: Var, g: Var) -> Result<(usize, usize, usize)> {
        let qv = self.value(q);
        let gv = self.value(g);
        let (n, c) = qv.dims2()?;
        match gv.shape() {
            &[a, k, b] if a == n && b == c => Ok((n, k, c)),
            _ => Err(TensorError::ShapeMismatch {
                op,
                left: qv.shape().to_vec(),
                right: gv.shape().to_vec(),
            }),
        }
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(TensorError::InvalidShape {
            shape: vec![],
            len: 0,
        })?;
        let (rows, _) = self.value(*first).dims2()?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if r != rows {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    left: self.value(*first).shape().to_vec(),
                    right: self.value(p).shape().to_vec(),
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let rg = self.any_grad(parts);
        Ok(self.push(
            Tensor::new([rows, total], out)?,
            Op::ConcatCols(parts.to_vec()),
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape.to_vec())?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().map(|v| v.as_f64()).sum();
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(T::from_f64(s)), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let s: f64 = xv.data().iter().map(|v| v.as_f64()).sum::<f64>() / xv.numel() as f64;
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(T::from_f64(s)), Op::Mean(x), rg)
    }

    /// Inverted dropout: zeroes entries with probability `rate` and scales
    /// survivors by `1 / (1 - rate)`. Identity when `rate` is zero.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if rate <= 0.0 {
            return Ok(x);
        }
        let keep = T::from_f64(1.0 / (1.0 - rate));
        let shape = self.value(x).shape().to_vec();
        let mask = Tensor::from_fn(shape, |_| {
            if rng.gen::<f64>() < rate {
                T::zero()
            } else {
                keep
            }
        });
        let m = self.constant(mask);
        self.mul(x, m)
    }

    /// Reverse pass from a scalar loss. Leaf gradients accumulate across
    /// calls until [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.value(loss).shape();
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NotScalar(shape.to_vec()));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut leaf_grads: Vec<(usize, Vec<T>)> = Vec::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let nodes = &self.nodes;
            let mut sink = GradSink {
                nodes,
                grads: &mut grads,
            };
            match &node.op {
                Op::Leaf | Op::Param(_) | Op::ParamRows { .. } => {
                    leaf_grads.push((i, g));
                }
                Op::MatMul(a, b) => {
                    let av = &nodes[a.0].value;
                    let bv = &nodes[b.0].value;
                    let (m, k) = av.dims2()?;
                    let n = bv.shape()[1];
                    if let Some(ga) = sink.slot(*a) {
                        let mut tmp = vec![T::zero(); m * k];
                        matmul_nt(&g, bv.data(), &mut tmp, m, n, k);
                        add_into(ga, &tmp);
                    }
                    if let Some(gb) = sink.slot(*b) {
                        let mut tmp = vec![T::zero(); k * n];
                        matmul_tn(av.data(), &g, &mut tmp, m, k, n);
                        add_into(gb, &tmp);
                    }
                }
                Op::Transpose(x) => {
                    let (r, c) = nodes[x.0].value.dims2()?;
                    if let Some(gx) = sink.slot(*x) {
                        // g has shape [c×r]
                        for i in 0..r {
                            for j in 0..c {
                                gx[i * c + j] = gx[i * c + j] + g[j * r + i];
                            }
                        }
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) {
                        -T::one()
                    } else {
                        T::one()
                    };
                    if let Some(ga) = sink.slot(*a) {
                        add_into(ga, &g);
                    }
                    if let Some(gb) = sink.slot(*b) {
                        let nb = gb.len();
                        for (i, &gv) in g.iter().enumerate() {
                            gb[i % nb] = gb[i % nb] + sign * gv;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let ad = nodes[a.0].value.data();
                    let bd = nodes[b.0].value.data();
                    let nb = bd.len();
                    if let Some(ga) = sink.slot(*a) {
                        for (i, &gv) in g.iter().enumerate() {
                            ga[i] = ga[i] + gv * bd[i % nb];
                        }
                    }
                    if let Some(gb) = sink.slot(*b) {
                        for (i, &gv) in g.iter().enumerate() {
                            gb[i % nb] = gb[i % nb] + gv * ad[i];
                        }
                    }
                }
                Op::Scale(x, c) => {
                    let c = T::from_f64(*c);
                    if let Some(gx) = sink.slot(*x) {
                        for (a, &gv) in gx.iter_mut().zip(&g) {
                            *a = *a + c * gv;
                        }
                    }
                }
                Op::Relu(x) => {
                    let xd = nodes[x.0].value.data();
                    if let Some(gx) = sink.slot(*x) {
                        for i in 0..g.len() {
                            if xd[i] > T::zero() {
                                gx[i] = gx[i] + g[i];
                            }
                        }
                    }
                }
                Op::Tanh(x) => {
                    let y = node.value.data();
                    if let Some(gx) = sink.slot(*x) {
                        for i in 0..g.len() {
                            gx[i] = gx[i] + g[i] * (T::one() - y[i] * y[i]);
                        }
                    }
                }
                Op::Softmax(x) => {
                    let y = node.value.data();
                    let cols = *node.value.shape().last().expect("rank >= 1");
                    if let Some(gx) = sink.slot(*x) {
                        for r in 0..y.len() / cols {
                            let yr = &y[r * cols..(r + 1) * cols];
                            let gr = &g[r * cols..(r + 1) * cols];
                            let s = dot(yr, gr);
                            for j in 0..cols {
                                let v = yr[j].as_f64() * (gr[j].as_f64() - s);
                                gx[r * cols + j] = gx[r * cols + j] + T::from_f64(v);
                            }
                        }
                    }
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let d = *node.value.shape().last().expect("rank >= 1");
                    let gd = nodes[gain.0].value.data();
                    if let Some(gx) = sink.slot(*x) {
                        for (r, &is) in inv_std.iter().enumerate() {
                            let mut sum_g = 0.0;
                            let mut sum_gx = 0.0;
                            for j in 0..d {
                                let gh = g[r * d + j].as_f64() * gd[j].as_f64();
                                sum_g += gh;
                                sum_gx += gh * xhat[r * d + j];
                            }
                            let mg = sum_g / d as f64;
                            let mgx = sum_gx / d as f64;
                            for j in 0..d {
                                let gh = g[r * d + j].as_f64() * gd[j].as_f64();
                                let v = is * (gh - mg - xhat[r * d + j] * mgx);
                                gx[r * d + j] = gx[r * d + j] + T::from_f64(v);
                            }
                        }
                    }
                    if let Some(gg) = sink.slot(*gain) {
                        let mut acc = vec![0.0f64; d];
                        for (i, &gv) in g.iter().enumerate() {
                            acc[i % d] += gv.as_f64() * xhat[i];
                        }
                        for (a, v) in gg.iter_mut().zip(acc) {
                            *a = *a + T::from_f64(v);
                        }
                    }
                    if let Some(gb) = sink.slot(*bias) {
                        let mut acc = vec![0.0f64; d];
                        for (i, &gv) in g.iter().enumerate() {
                            acc[i % d] += gv.as_f64();
                        }
                        for (a, v) in gb.iter_mut().zip(acc) {
                            *a = *a + T::from_f64(v);
                        }
                    }
                }
                Op::CrossEntropy {
                    logits,
                    labels,
                    probs,
                } => {
                    let n = labels.len();
                    let c = probs.len() / n;
                    let scale = g[0].as_f64() / n as f64;
                    if let Some(gl) = sink.slot(*logits) {
                        for r in 0..n {
                            for j in 0..c {
                                let onehot = if labels[r] == j { 1.0 } else { 0.0 };
                                let v = (probs[r * c + j] - onehot) * scale;
                                gl[r * c + j] = gl[r * c + j] + T::from_f64(v);
                            }
                        }
                    }
                }
                Op::GatherRows { x, idx } => {
                    let c = *node.value.shape().last().expect("rank >= 1");
                    if let Some(gx) = sink.slot(*x) {
                        for (m, &row) in idx.iter().enumerate() {
                            for j in 0..c {
                                gx[row * c + j] = gx[row * c + j] + g[m * c + j];
                            }
                        }
                    }
                }
                Op::RowDot { q, g: gath } => {
                    let qd = nodes[q.0].value.data();
                    let gd = nodes[gath.0].value.data();
                    let (n, c) = nodes[q.0].value.dims2()?;
                    let kk = node.value.shape()[1];
                    if let Some(gq) = sink.slot(*q) {
                        for i in 0..n {
                            for k in 0..kk {
                                let w = g[i * kk + k];
                                let off = (i * kk + k) * c;
                                for j in 0..c {
                                    gq[i * c + j] = gq[i * c + j] + w * gd[off + j];
                                }
                            }
                        }
                    }
                    if let Some(gg) = sink.slot(*gath) {
                        for i in 0..n {
                            for k in 0..kk {
                                let w = g[i * kk + k];
                                let off = (i * kk + k) * c;
                                for j in 0..c {
                                    gg[off + j] = gg[off + j] + w * qd[i * c + j];
                                }
                            }
                        }
                    }
                }
                Op::RowWeightedSum { w, g: gath } => {
                    let wd = nodes[w.0].value.data();
                    let gd = nodes[gath.0].value.data();
                    let (n, kk) = nodes[w.0].value.dims2()?;
                    let c = node.value.shape()[1];
                    if let Some(gw) = sink.slot(*w) {
                        for i in 0..n {
                            let gi = &g[i * c..(i + 1) * c];
                            for k in 0..kk {
                                let off = (i * kk + k) * c;
                                let v = dot(gi, &gd[off..off + c]);
                                gw[i * kk + k] = gw[i * kk + k] + T::from_f64(v);
                            }
                        }
                    }
                    if let Some(gg) = sink.slot(*gath) {
                        for i in 0..n {
                            for k in 0..kk {
                                let wik = wd[i * kk + k];
                                let off = (i * kk + k) * c;
                                for j in 0..c {
                                    gg[off + j] = gg[off + j] + wik * g[i * c + j];
                                }
                            }
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let total = node.value.shape()[1];
                    let rows = node.value.shape()[0];
                    let mut off = 0;
                    for p in parts {
                        let c = nodes[p.0].value.shape()[1];
                        if let Some(gp) = sink.slot(*p) {
                            for r in 0..rows {
                                for j in 0..c {
                                    gp[r * c + j] = gp[r * c + j] + g[r * total + off + j];
                                }
                            }
                        }
                        off += c;
                    }
                }
                Op::Reshape(x) => {
                    if let Some(gx) = sink.slot(*x) {
                        add_into(gx, &g);
                    }
                }
                Op::Sum(x) => {
                    if let Some(gx) = sink.slot(*x) {
                        gx.iter_mut().for_each(|a| *a = *a + g[0]);
                    }
                }
                Op::Mean(x) => {
                    if let Some(gx) = sink.slot(*x) {
                        let v = g[0] / T::from_f64(gx.len() as f64);
                        gx.iter_mut().for_each(|a| *a = *a + v);
                    }
                }
            }
        }

        for (i, g) in leaf_grads {
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(existing) => add_into(existing, &g),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    /// Gradients of bound parameters, as `(id, rows, grad)`. `rows` is `None`
    /// for whole-parameter leaves and lists the gathered rows for
    /// [`Tape::param_rows`] leaves.
    pub(crate) fn param_grads(&self) -> impl Iterator<Item = (ParamId, Option<&[usize]>, &[T])> {
        self.nodes.iter().filter_map(|n| {
            let g = n.grad.as_deref()?;
            match &n.op {
                Op::Param(id) => Some((*id, None, g)),
                Op::ParamRows { id, rows } => Some((*id, Some(rows.as_slice()), g)),
                _ => None,
            }
        })
    }
}

struct GradSink<'a, T> {
    nodes: &'a [Node<T>],
    grads: &'a mut [Option<Vec<T>>],
}

impl<T: Real> GradSink<'_, T> {
    fn slot(&mut self, v: Var) -> Option<&mut Vec<T>> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        let n = node.value.numel();
        Some(self.grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}
