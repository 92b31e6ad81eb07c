//! Building blocks shared by the sketch model and the full-width encoder:
//! linear maps, layer norms, position-wise feed-forward blocks, sinusoidal
//! positions and the attention-pooling classifier head.

use rand::Rng;
use thiserror::Error;

use crate::tensor::{ParamId, ParamStore, Real, Tape, Tensor, TensorError, Var};
use crate::textpipe::xavier_uniform;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("sequence length {len} exceeds the configured maximum {max}")]
    TooLong { len: usize, max: usize },
    #[error("token id {id} outside vocabulary of size {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },
    #[error("expected {expected} index matrices, got {got}")]
    IndexCount { expected: usize, got: usize },
    #[error("index matrix does not match sequence: {0}")]
    IndexShape(String),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("example has no real tokens")]
    EmptyExample,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

/// `x · W + b`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore<f32>, name: &str, inp: usize, out: usize, rng: &mut R) -> Self {
        Linear {
            w: store.add(format!("{name}.w"), xavier_uniform(inp, out, rng)),
            b: store.add(format!("{name}.b"), Tensor::zeros([out])),
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let y = tape.matmul(x, w)?;
        Ok(tape.add(y, b)?)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore<f32>, name: &str, dim: usize) -> Self {
        LayerNorm {
            gain: store.add(format!("{name}.gain"), Tensor::full([dim], 1.0)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros([dim])),
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gain);
        let b = tape.param(store, self.bias);
        Ok(tape.layer_norm(x, g, b)?)
    }
}

/// Position-wise `dim → inner → dim` block with a ReLU.
#[derive(Clone, Copy, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore<f32>, name: &str, dim: usize, inner: usize, rng: &mut R) -> Self {
        FeedForward {
            up: Linear::new(store, &format!("{name}.up"), dim, inner, rng),
            down: Linear::new(store, &format!("{name}.down"), inner, dim, rng),
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.up.forward(tape, store, x)?;
        let h = tape.relu(h);
        self.down.forward(tape, store, h)
    }
}

/// Standard sinusoidal position table, `n×dim`.
pub fn sinusoidal_positions<T: Real>(n: usize, dim: usize) -> Tensor<T> {
    Tensor::from_fn([n, dim], |k| {
        let (pos, i) = (k / dim, k % dim);
        let freq = 1.0 / 10_000f64.powf((2 * (i / 2)) as f64 / dim as f64);
        let a = pos as f64 * freq;
        T::from_f64(if i % 2 == 0 { a.sin() } else { a.cos() })
    })
}

/// Embedding lookup plus (optionally) sinusoidal positions.
pub fn embed<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    table: ParamId,
    ids: &[u32],
    positions: bool,
) -> Result<Var> {
    let vocab = store.value(table).shape()[0];
    let dim = store.value(table).shape()[1];
    let rows = ids
        .iter()
        .map(|&id| {
            if (id as usize) < vocab {
                Ok(id as usize)
            } else {
                Err(ModelError::TokenOutOfRange { id, vocab })
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let x = tape.param_rows(store, table, &rows)?;
    if !positions {
        return Ok(x);
    }
    let pe = tape.constant(sinusoidal_positions(ids.len(), dim));
    Ok(tape.add(x, pe)?)
}

/// Additive attention pooling over valid positions followed by a linear
/// classifier: `w = softmax(tanh(H·P + p)·v)`, `h = wᵀH`, `logits = h·W + b`.
#[derive(Clone, Copy, Debug)]
pub struct PoolHead {
    pub proj: Linear,
    pub query: ParamId,
    pub classifier: Linear,
}

/// Result of [`PoolHead::forward`].
#[derive(Clone, Copy, Debug)]
pub struct Pooled {
    /// `1×N` pooling weights (zero past `valid_len`).
    pub weights: Var,
    /// `1×dim` pooled representation.
    pub pooled: Var,
    /// `1×C` class logits.
    pub logits: Var,
}

impl PoolHead {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore<f32>,
        name: &str,
        dim: usize,
        n_classes: usize,
        rng: &mut R,
    ) -> Self {
        PoolHead {
            proj: Linear::new(store, &format!("{name}.pool"), dim, dim, rng),
            query: store.add(format!("{name}.pool.query"), xavier_uniform(dim, 1, rng)),
            classifier: Linear::new(store, &format!("{name}.classifier"), dim, n_classes, rng),
        }
    }

    pub fn pool<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, h: Var, valid_len: usize) -> Result<(Var, Var)> {
        let n = tape.shape(h)[0];
        if valid_len == 0 || valid_len > n {
            return Err(ModelError::EmptyExample);
        }
        let u = self.proj.forward(tape, store, h)?;
        let u = tape.tanh(u);
        let v = tape.param(store, self.query);
        let e = tape.matmul(u, v)?;
        let e = tape.reshape(e, &[1, n])?;
        let keep: Vec<bool> = (0..n).map(|j| j < valid_len).collect();
        let w = tape.softmax_rows_masked(e, &keep)?;
        let pooled = tape.matmul(w, h)?;
        Ok((w, pooled))
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, h: Var, valid_len: usize) -> Result<Pooled> {
        let (weights, pooled) = self.pool(tape, store, h, valid_len)?;
        let logits = self.classifier.forward(tape, store, pooled)?;
        Ok(Pooled {
            weights,
            pooled,
            logits,
        })
    }
}

/// `keep[i*n + j]` is true when query `i` may attend key `j`: both are real
/// tokens.
pub fn valid_mask(n: usize, valid_len: usize) -> Vec<bool> {
    (0..n * n).map(|k| k / n < valid_len && k % n < valid_len).collect()
}

/// Index of the largest logit (first on ties).
pub fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}
