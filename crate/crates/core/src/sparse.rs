//! Full-width multi-head encoder with dense or index-driven sparse attention.
//!
//! In sparse mode every query `i` of head `h` attends only the keys listed in
//! row `i` of that head's [`IndexMatrix`]. Keys and values are projected once
//! per head and then gathered into `N×K×(D/h)` tensors, so the attention cost
//! is `O(N·K·D)` rather than `O(N²·D)`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{argmax, embed, valid_mask, FeedForward, LayerNorm, Linear, ModelError, PoolHead, Pooled, Result};
use crate::sampler::{build_layer_indices, IndexMatrix, SamplingConfig};
use crate::sketch::{AttentionMatrix, SketchModel};
use crate::tensor::{ParamId, ParamStore, Real, Tape, Tensor, Var};
use crate::textpipe::{xavier_uniform, Example};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub n_classes: usize,
    pub max_len: usize,
    pub positions: bool,
    /// Dropout rate on sublayer outputs during training.
    pub dropout: f64,
}

impl EncoderConfig {
    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.heads == 0 || self.dim == 0 || self.dim % self.heads != 0 {
            return bad(format!("dim {} not divisible by heads {}", self.dim, self.heads));
        }
        if self.layers == 0 {
            return bad("encoder needs at least one layer".into());
        }
        if self.n_classes < 2 {
            return bad("need at least two classes".into());
        }
        if self.vocab_size < 3 || self.max_len == 0 {
            return bad("vocab_size must be >= 3 and max_len >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

/// Post-norm multi-head Transformer layer.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    /// Per-head `D×(D/h)` projections.
    pub wq: Vec<ParamId>,
    pub wk: Vec<ParamId>,
    pub wv: Vec<ParamId>,
    pub wo: Linear,
    pub ffn: FeedForward,
    pub ln1: LayerNorm,
    pub ln2: LayerNorm,
}

/// How each layer selects keys.
#[derive(Clone, Copy, Debug)]
pub enum AttentionMode<'a> {
    /// Every query attends every valid key.
    Dense,
    /// `indices[layer][head]` lists the keys of each query.
    Sparse(&'a [Vec<IndexMatrix>]),
}

/// Gathered keys and values of every head, each `N×K×(D/h)`.
#[derive(Clone, Debug)]
pub struct GatheredKv {
    pub keys: Vec<Var>,
    pub values: Vec<Var>,
}

impl EncoderLayer {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore<f32>, name: &str, dim: usize, heads: usize, rng: &mut R) -> Self {
        let dh = dim / heads;
        let mut proj = |kind: &str| -> Vec<ParamId> {
            (0..heads)
                .map(|h| store.add(format!("{name}.{kind}{h}"), xavier_uniform(dim, dh, rng)))
                .collect()
        };
        let wq = proj("wq");
        let wk = proj("wk");
        let wv = proj("wv");
        EncoderLayer {
            wq,
            wk,
            wv,
            wo: Linear::new(store, &format!("{name}.wo"), dim, dim, rng),
            ffn: FeedForward::new(store, &format!("{name}.ffn"), dim, 2 * dim, rng),
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), dim),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), dim),
        }
    }

    pub fn heads(&self) -> usize {
        self.wq.len()
    }

    fn project<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var, w: &[ParamId]) -> Result<Vec<Var>> {
        w.iter()
            .map(|&id| {
                let p = tape.param(store, id);
                Ok(tape.matmul(x, p)?)
            })
            .collect()
    }

    /// Projects `x` to per-head keys and values, then gathers the rows named
    /// by each head's index matrix.
    pub fn gather_kv<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
        indices: &[IndexMatrix],
    ) -> Result<GatheredKv> {
        let k = self.project(tape, store, x, &self.wk)?;
        let v = self.project(tape, store, x, &self.wv)?;
        gather_projected(tape, &k, &v, indices)
    }

    /// Returns the layer output and each head's attention weights (`N×N` in
    /// dense mode, `N×K` in sparse mode).
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
        valid_len: usize,
        indices: Option<&[IndexMatrix]>,
        dropout: Option<(f64, &mut ChaCha8Rng)>,
    ) -> Result<(Var, Vec<Var>)> {
        let n = tape.shape(x)[0];
        let heads = self.heads();
        let dh = tape.shape(x)[1] / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let q = self.project(tape, store, x, &self.wq)?;
        let k = self.project(tape, store, x, &self.wk)?;
        let v = self.project(tape, store, x, &self.wv)?;
        let mut outs = Vec::with_capacity(heads);
        let mut weights = Vec::with_capacity(heads);
        match indices {
            None => {
                let keep = valid_mask(n, valid_len);
                for h in 0..heads {
                    let (o, w) = dense_attention_head(tape, q[h], k[h], v[h], &keep, scale)?;
                    outs.push(o);
                    weights.push(w);
                }
            }
            Some(idx) => {
                if idx.len() != heads {
                    return Err(ModelError::IndexCount {
                        expected: heads,
                        got: idx.len(),
                    });
                }
                let g = gather_projected(tape, &k, &v, idx)?;
                for h in 0..heads {
                    let (o, w) = sparse_attention_head(tape, q[h], g.keys[h], g.values[h], valid_len, scale)?;
                    outs.push(o);
                    weights.push(w);
                }
            }
        }
        let cat = if heads == 1 { outs[0] } else { tape.concat_cols(&outs)? };
        let mut dropout = dropout;
        let mut attn = self.wo.forward(tape, store, cat)?;
        if let Some((rate, rng)) = dropout.as_mut() {
            attn = tape.dropout(attn, *rate, *rng)?;
        }
        let r = tape.add(x, attn)?;
        let x1 = self.ln1.forward(tape, store, r)?;
        let mut f = self.ffn.forward(tape, store, x1)?;
        if let Some((rate, rng)) = dropout.as_mut() {
            f = tape.dropout(f, *rate, *rng)?;
        }
        let r = tape.add(x1, f)?;
        let x2 = self.ln2.forward(tape, store, r)?;
        Ok((x2, weights))
    }
}

fn gather_projected<T: Real>(tape: &mut Tape<T>, k: &[Var], v: &[Var], indices: &[IndexMatrix]) -> Result<GatheredKv> {
    let mut keys = Vec::with_capacity(indices.len());
    let mut values = Vec::with_capacity(indices.len());
    for (h, m) in indices.iter().enumerate() {
        let n = tape.shape(k[h])[0];
        if m.n() != n {
            return Err(ModelError::IndexShape(format!("index matrix for N={} applied to N={n}", m.n())));
        }
        let flat: Vec<usize> = m.flat().iter().map(|&i| i as usize).collect();
        let lead = [n, m.width()];
        keys.push(tape.gather_rows(k[h], &flat, &lead)?);
        values.push(tape.gather_rows(v[h], &flat, &lead)?);
    }
    Ok(GatheredKv { keys, values })
}

/// One head of dense attention: `softmax(QKᵀ·scale)·V` under `keep`.
pub fn dense_attention_head<T: Real>(
    tape: &mut Tape<T>,
    q: Var,
    k: Var,
    v: Var,
    keep: &[bool],
    scale: f64,
) -> Result<(Var, Var)> {
    let kt = tape.transpose(k)?;
    let s = tape.matmul(q, kt)?;
    let s = tape.scale(s, scale);
    let w = tape.softmax_rows_masked(s, keep)?;
    Ok((tape.matmul(w, v)?, w))
}

/// One head of sparse attention over gathered keys/values (`N×K×dh`).
/// Queries at or past `valid_len` are inert and produce zero rows.
pub fn sparse_attention_head<T: Real>(
    tape: &mut Tape<T>,
    q: Var,
    keys: Var,
    values: Var,
    valid_len: usize,
    scale: f64,
) -> Result<(Var, Var)> {
    let s = tape.row_dot(q, keys)?;
    let s = tape.scale(s, scale);
    let (n, width) = tape.value(s).dims2()?;
    let keep: Vec<bool> = (0..n * width).map(|k| k / width < valid_len).collect();
    let w = tape.softmax_rows_masked(s, &keep)?;
    Ok((tape.row_weighted_sum(w, values)?, w))
}

/// Graph handles from one encoder forward pass.
#[derive(Clone, Debug)]
pub struct EncoderPass {
    pub hidden: Var,
    /// `attention[layer][head]`.
    pub attention: Vec<Vec<Var>>,
    pub head: Pooled,
}

#[derive(Clone, Debug)]
pub struct EncoderModel<T: Real = f32> {
    pub cfg: EncoderConfig,
    pub store: ParamStore<T>,
    pub embedding: ParamId,
    pub layers: Vec<EncoderLayer>,
    pub head: PoolHead,
}

impl EncoderModel<f32> {
    pub fn new<R: Rng + ?Sized>(cfg: EncoderConfig, table: Tensor<f32>, rng: &mut R) -> Result<Self> {
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
        let embedding = store.add("encoder.embedding", table);
        let layers = (0..cfg.layers)
            .map(|l| EncoderLayer::new(&mut store, &format!("encoder.layer{l}"), cfg.dim, cfg.heads, rng))
            .collect();
        let head = PoolHead::new(&mut store, "encoder", cfg.dim, cfg.n_classes, rng);
        Ok(EncoderModel {
            cfg,
            store,
            embedding,
            layers,
            head,
        })
    }

    pub fn random<R: Rng + ?Sized>(cfg: EncoderConfig, rng: &mut R) -> Result<Self> {
        let table = xavier_uniform(cfg.vocab_size, cfg.dim, rng);
        Self::new(cfg, table, rng)
    }
}

impl<T: Real> EncoderModel<T> {
    pub fn cast<U: Real>(&self) -> EncoderModel<U> {
        EncoderModel {
            cfg: self.cfg.clone(),
            store: self.store.cast(),
            embedding: self.embedding,
            layers: self.layers.clone(),
            head: self.head,
        }
    }

    /// Records a forward pass. `dropout_rng` enables training-mode dropout.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        ids: &[u32],
        valid_len: usize,
        mode: AttentionMode<'_>,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<EncoderPass> {
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
        if let AttentionMode::Sparse(idx) = mode {
            if idx.len() != self.layers.len() {
                return Err(ModelError::IndexCount {
                    expected: self.layers.len(),
                    got: idx.len(),
                });
            }
            for m in idx.iter().flatten() {
                if m.n() != n || m.valid_len() != valid_len {
                    return Err(ModelError::IndexShape(format!(
                        "matrix for N={}, valid_len={} used with N={n}, valid_len={valid_len}",
                        m.n(),
                        m.valid_len()
                    )));
                }
            }
        }
        let rate = self.cfg.dropout;
        let mut x = embed(tape, &self.store, self.embedding, ids, self.cfg.positions)?;
        if let Some(rng) = dropout_rng.as_deref_mut() {
            x = tape.dropout(x, rate, rng)?;
        }
        let mut attention = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let idx = match mode {
                AttentionMode::Dense => None,
                AttentionMode::Sparse(all) => Some(all[l].as_slice()),
            };
            let drop = dropout_rng.as_deref_mut().map(|r| (rate, r));
            let (y, w) = layer.forward(tape, &self.store, x, valid_len, idx, drop)?;
            attention.push(w);
            x = y;
        }
        let head = self.head.forward(tape, &self.store, x, valid_len)?;
        Ok(EncoderPass {
            hidden: x,
            attention,
            head,
        })
    }

    pub fn loss(
        &self,
        tape: &mut Tape<T>,
        example: &Example,
        mode: AttentionMode<'_>,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Var, Var)> {
        let pass = self.forward(tape, &example.token_ids, example.attn_len, mode, dropout_rng)?;
        let loss = tape.cross_entropy(pass.head.logits, &[example.label])?;
        Ok((loss, pass.head.logits))
    }

    pub fn predict(&self, example: &Example, mode: AttentionMode<'_>) -> Result<usize> {
        let mut tape = Tape::no_grad();
        let pass = self.forward(&mut tape, &example.token_ids, example.attn_len, mode, None)?;
        Ok(argmax(tape.value(pass.head.logits).data()))
    }

    /// Dense-mode attention of every layer, averaged over heads.
    pub fn head_averaged_attention(&self, example: &Example) -> Result<Vec<AttentionMatrix>> {
        let mut tape = Tape::no_grad();
        let pass = self.forward(&mut tape, &example.token_ids, example.attn_len, AttentionMode::Dense, None)?;
        let n = example.token_ids.len();
        let h = self.cfg.heads as f64;
        Ok(pass
            .attention
            .iter()
            .map(|heads| {
                let mut acc = vec![0.0f64; n * n];
                for &w in heads {
                    for (a, v) in acc.iter_mut().zip(tape.value(w).data()) {
                        *a += v.as_f64();
                    }
                }
                AttentionMatrix::new(n, example.attn_len, acc.iter().map(|a| (a / h) as f32).collect())
            })
            .collect())
    }
}

/// A frozen sketch model driving the key selection of a sparse encoder.
#[derive(Clone, Debug)]
pub struct SmartBird {
    pub sketch: SketchModel<f32>,
    pub encoder: EncoderModel<f32>,
    pub sampling: SamplingConfig,
}

impl SmartBird {
    pub fn new(sketch: SketchModel<f32>, encoder: EncoderModel<f32>, sampling: SamplingConfig) -> Result<Self> {
        if sketch.cfg.layers != encoder.cfg.layers {
            return Err(ModelError::Config(format!(
                "sketch has {} layers, encoder {}",
                sketch.cfg.layers, encoder.cfg.layers
            )));
        }
        if sampling.heads != encoder.cfg.heads {
            return Err(ModelError::Config(format!(
                "sampling for {} heads, encoder has {}",
                sampling.heads, encoder.cfg.heads
            )));
        }
        if sampling.k == 0 {
            return Err(ModelError::Config("K must be at least 1".into()));
        }
        Ok(SmartBird {
            sketch,
            encoder,
            sampling,
        })
    }

    /// Per-layer, per-head index matrices drawn from the sketch attention of
    /// `example` with the given seed.
    pub fn indices(&self, example: &Example, seed: u64) -> Result<Vec<Vec<IndexMatrix>>> {
        let attn = self.sketch.attention(example)?;
        Ok(self.indices_from(&attn, seed))
    }

    pub fn indices_from(&self, attention: &[AttentionMatrix], seed: u64) -> Vec<Vec<IndexMatrix>> {
        build_layer_indices(attention, &self.sampling, seed)
    }

    pub fn predict(&self, example: &Example, seed: u64) -> Result<usize> {
        let idx = self.indices(example, seed)?;
        self.encoder.predict(example, AttentionMode::Sparse(&idx))
    }
}
