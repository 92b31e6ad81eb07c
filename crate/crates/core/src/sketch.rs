//! Tiny single-head Transformer whose per-layer attention matrices guide
//! token sampling for the full-width model.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{argmax, embed, valid_mask, FeedForward, LayerNorm, ModelError, PoolHead, Pooled, Result};
use crate::tensor::{ParamId, ParamStore, Real, Tape, Tensor, Var};
use crate::textpipe::{xavier_uniform, Example};

/// Row-stochastic `N×N` attention weights of one layer for one example.
///
/// Rows and columns at or past `valid_len` are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMatrix {
    n: usize,
    valid_len: usize,
    weights: Vec<f32>,
}

impl AttentionMatrix {
    pub fn new(n: usize, valid_len: usize, weights: Vec<f32>) -> Self {
        assert_eq!(weights.len(), n * n, "attention matrix must be N×N");
        assert!(valid_len <= n);
        AttentionMatrix { n, valid_len, weights }
    }

    /// Every valid row spreads its mass evenly over the valid columns.
    pub fn uniform(n: usize, valid_len: usize) -> Self {
        let w = 1.0 / valid_len.max(1) as f32;
        let weights = (0..n * n)
            .map(|k| if k / n < valid_len && k % n < valid_len { w } else { 0.0 })
            .collect();
        AttentionMatrix::new(n, valid_len, weights)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn valid_len(&self) -> usize {
        self.valid_len
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.weights[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.weights[i * self.n..(i + 1) * self.n]
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    /// Valid `valid_len × valid_len` block, row-major, in `f64`.
    pub fn valid_block(&self) -> Vec<f64> {
        let v = self.valid_len;
        (0..v)
            .flat_map(|i| self.row(i)[..v].iter().map(|&x| x as f64))
            .collect()
    }

    /// Largest deviation of a valid row sum from one.
    pub fn max_row_sum_error(&self) -> f64 {
        (0..self.valid_len)
            .map(|i| (self.row(i)[..self.valid_len].iter().map(|&x| x as f64).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SketchConfig {
    pub vocab_size: usize,
    pub dim: usize,
    pub layers: usize,
    pub n_classes: usize,
    pub max_len: usize,
    /// Add sinusoidal position encodings to the embeddings.
    pub positions: bool,
}

impl SketchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.dim == 0 {
            return bad("sketch dim must be positive");
        }
        if self.layers == 0 {
            return bad("sketch needs at least one layer");
        }
        if self.n_classes < 2 {
            return bad("need at least two classes");
        }
        if self.vocab_size < 3 || self.max_len == 0 {
            return bad("vocab_size must be >= 3 and max_len >= 1");
        }
        Ok(())
    }
}

/// One single-head post-norm Transformer layer of width `d`.
#[derive(Clone, Copy, Debug)]
pub struct SketchLayer {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub ffn: FeedForward,
    pub ln1: LayerNorm,
    pub ln2: LayerNorm,
}

impl SketchLayer {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore<f32>, name: &str, d: usize, rng: &mut R) -> Self {
        SketchLayer {
            wq: store.add(format!("{name}.wq"), xavier_uniform(d, d, rng)),
            wk: store.add(format!("{name}.wk"), xavier_uniform(d, d, rng)),
            wv: store.add(format!("{name}.wv"), xavier_uniform(d, d, rng)),
            ffn: FeedForward::new(store, &format!("{name}.ffn"), d, 2 * d, rng),
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), d),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), d),
        }
    }

    /// Returns the layer output and its post-softmax attention matrix.
    fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
        keep: &[bool],
    ) -> Result<(Var, Var)> {
        let d = tape.shape(x)[1];
        let wq = tape.param(store, self.wq);
        let wk = tape.param(store, self.wk);
        let wv = tape.param(store, self.wv);
        let q = tape.matmul(x, wq)?;
        let k = tape.matmul(x, wk)?;
        let v = tape.matmul(x, wv)?;
        let kt = tape.transpose(k)?;
        let s = tape.matmul(q, kt)?;
        let s = tape.scale(s, 1.0 / (d as f64).sqrt());
        let a = tape.softmax_rows_masked(s, keep)?;
        let o = tape.matmul(a, v)?;
        let r = tape.add(x, o)?;
        let x1 = self.ln1.forward(tape, store, r)?;
        let f = self.ffn.forward(tape, store, x1)?;
        let r = tape.add(x1, f)?;
        let x2 = self.ln2.forward(tape, store, r)?;
        Ok((x2, a))
    }
}

/// Graph handles from one sketch forward pass.
#[derive(Clone, Debug)]
pub struct SketchPass {
    /// Final `N×d` hidden states.
    pub hidden: Var,
    /// Per-layer `N×N` attention weights.
    pub attention: Vec<Var>,
    pub head: Pooled,
}

#[derive(Clone, Debug)]
pub struct SketchModel<T: Real = f32> {
    pub cfg: SketchConfig,
    pub store: ParamStore<T>,
    pub embedding: ParamId,
    pub layers: Vec<SketchLayer>,
    pub head: PoolHead,
}

impl SketchModel<f32> {
    /// Builds a model around a `V×d` embedding table (normally the PCA
    /// projection of the full-width table).
    pub fn new<R: Rng + ?Sized>(cfg: SketchConfig, table: Tensor<f32>, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        if table.shape() != [cfg.vocab_size, cfg.dim] {
            return Err(ModelError::Config(format!(
                "embedding table shape {:?}, expected [{}, {}]",
                table.shape(),
                cfg.vocab_size,
                cfg.dim
            )));
        }
        let mut store = ParamStore::new();
        let embedding = store.add("sketch.embedding", table);
        let layers = (0..cfg.layers)
            .map(|l| SketchLayer::new(&mut store, &format!("sketch.layer{l}"), cfg.dim, rng))
            .collect();
        let head = PoolHead::new(&mut store, "sketch", cfg.dim, cfg.n_classes, rng);
        Ok(SketchModel {
            cfg,
            store,
            embedding,
            layers,
            head,
        })
    }

    /// Model with a Xavier-uniform embedding table.
    pub fn random<R: Rng + ?Sized>(cfg: SketchConfig, rng: &mut R) -> Result<Self> {
        let table = xavier_uniform(cfg.vocab_size, cfg.dim, rng);
        Self::new(cfg, table, rng)
    }
}

impl<T: Real> SketchModel<T> {
    pub fn cast<U: Real>(&self) -> SketchModel<U> {
        SketchModel {
            cfg: self.cfg.clone(),
            store: self.store.cast(),
            embedding: self.embedding,
            layers: self.layers.clone(),
            head: self.head,
        }
    }

    /// Records the forward pass for `ids` (length `N`, first `valid_len`
    /// real) on `tape`.
    pub fn forward(&self, tape: &mut Tape<T>, ids: &[u32], valid_len: usize) -> Result<SketchPass> {
        let n = ids.len();
        if n > self.cfg.max_len {
            return Err(ModelError::TooLong {
                len: n,
                max: self.cfg.max_len,
            });
        }
        if valid_len == 0 || valid_len > n {
            return Err(ModelError::EmptyExample);
        }
        let keep = valid_mask(n, valid_len);
        let mut x = embed(tape, &self.store, self.embedding, ids, self.cfg.positions)?;
        let mut attention = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, a) = layer.forward(tape, &self.store, x, &keep)?;
            attention.push(a);
            x = y;
        }
        let head = self.head.forward(tape, &self.store, x, valid_len)?;
        Ok(SketchPass {
            hidden: x,
            attention,
            head,
        })
    }

    /// Final hidden states and per-layer attention matrices, without
    /// recording gradients.
    pub fn sketch_forward(&self, example: &Example) -> Result<(Tensor<T>, Vec<AttentionMatrix>)> {
        let mut tape = Tape::no_grad();
        let pass = self.forward(&mut tape, &example.token_ids, example.attn_len)?;
        let n = example.token_ids.len();
        let mats = pass
            .attention
            .iter()
            .map(|&a| {
                let w = tape.value(a).data().iter().map(|v| v.as_f64() as f32).collect();
                AttentionMatrix::new(n, example.attn_len, w)
            })
            .collect();
        Ok((tape.value(pass.hidden).clone(), mats))
    }

    pub fn attention(&self, example: &Example) -> Result<Vec<AttentionMatrix>> {
        Ok(self.sketch_forward(example)?.1)
    }

    /// Cross-entropy loss for one example, recorded on `tape`.
    pub fn loss(&self, tape: &mut Tape<T>, example: &Example) -> Result<(Var, Var)> {
        let pass = self.forward(tape, &example.token_ids, example.attn_len)?;
        let loss = tape.cross_entropy(pass.head.logits, &[example.label])?;
        Ok((loss, pass.head.logits))
    }

    pub fn predict(&self, example: &Example) -> Result<usize> {
        let mut tape = Tape::no_grad();
        let pass = self.forward(&mut tape, &example.token_ids, example.attn_len)?;
        Ok(argmax(tape.value(pass.head.logits).data()))
    }
}
