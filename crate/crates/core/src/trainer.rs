//! Model assembly, the two-phase training procedure and evaluation.
//!
//! Phase one trains the sketch model on the task. Phase two freezes it and
//! trains the sparse encoder, resampling each example's index matrices from
//! the sketch attention at every step. The dense baseline skips phase one
//! and attends all pairs.

use std::collections::HashMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{argmax, ModelError};
use crate::sampler::{derive_seed, SamplingConfig, SamplingStrategy};
use crate::sketch::{AttentionMatrix, SketchConfig, SketchModel};
use crate::sparse::{AttentionMode, EncoderConfig, EncoderModel, SmartBird};
use crate::tensor::{clip_grad_norm, Adam, AdamConfig, ParamStore, Tape, TensorError, Var};
use crate::textpipe::{Dataset, EmbeddingTable, Example, TextError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("{phase} diverged at epoch {epoch}, step {step}: loss {loss}")]
    Divergence {
        phase: String,
        epoch: usize,
        step: usize,
        loss: f64,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Text(#[from] TextError),
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

/// Every hyperparameter of a run. Serialized with flat keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Sketch model width `d`.
    pub tiny_dim: usize,
    /// Encoder width `D`.
    pub dim: usize,
    pub heads: usize,
    /// Keys sampled per query.
    pub k: usize,
    pub layers: usize,
    /// Truncation length `N`.
    pub max_len: usize,
    pub min_freq: usize,
    pub strategy: SamplingStrategy,
    pub include_self: bool,
    pub positions: bool,
    pub lr: f64,
    /// Sketch learning rate; `lr` when absent.
    pub sketch_lr: Option<f64>,
    pub batch_size: usize,
    pub epochs: usize,
    /// Sketch epochs; `epochs` when absent.
    pub sketch_epochs: Option<usize>,
    pub dropout: f64,
    pub clip_norm: f64,
    pub init_seed: u64,
    pub sampling_seed: u64,
    pub data_seed: u64,
    pub eval_seed: u64,
    /// Reuse each training example's sketch attention across epochs.
    pub cache_sketch: bool,
    /// Worker threads for evaluation.
    pub threads: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            tiny_dim: 4,
            dim: 256,
            heads: 8,
            k: 20,
            layers: 2,
            max_len: 512,
            min_freq: 1,
            strategy: SamplingStrategy::SquaredInvLog,
            include_self: false,
            positions: true,
            lr: 1e-4,
            sketch_lr: None,
            batch_size: 64,
            epochs: 2,
            sketch_epochs: None,
            dropout: 0.2,
            clip_norm: 1.0,
            init_seed: 0,
            sampling_seed: 1,
            data_seed: 2,
            eval_seed: 3,
            cache_sketch: false,
            threads: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.heads == 0 || self.dim % self.heads != 0 {
            return bad(format!("dim {} must be divisible by heads {}", self.dim, self.heads));
        }
        if self.tiny_dim == 0 || self.dim == 0 || self.layers == 0 || self.max_len == 0 {
            return bad("tiny_dim, dim, layers and max_len must be positive".into());
        }
        if self.tiny_dim > self.dim {
            return bad(format!("tiny_dim {} exceeds dim {}", self.tiny_dim, self.dim));
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.min_freq == 0 {
            return bad("min_freq must be at least 1".into());
        }
        if !(self.lr > 0.0) || self.sketch_lr.is_some_and(|l| !(l > 0.0)) {
            return bad("learning rates must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm must be positive".into());
        }
        if self.threads == 0 {
            return bad("threads must be at least 1".into());
        }
        Ok(())
    }

    pub fn sketch_config(&self, vocab_size: usize, n_classes: usize) -> SketchConfig {
        SketchConfig {
            vocab_size,
            dim: self.tiny_dim,
            layers: self.layers,
            n_classes,
            max_len: self.max_len,
            positions: self.positions,
        }
    }

    pub fn encoder_config(&self, vocab_size: usize, n_classes: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size,
            dim: self.dim,
            heads: self.heads,
            layers: self.layers,
            n_classes,
            max_len: self.max_len,
            positions: self.positions,
            dropout: self.dropout,
        }
    }

    pub fn sampling_config(&self) -> SamplingConfig {
        SamplingConfig {
            strategy: self.strategy,
            k: self.k,
            heads: self.heads,
            include_self: self.include_self,
        }
    }

    /// Copy with the init, sampling and data seeds derived from one global
    /// seed. The evaluation seed is left alone so runs stay comparable.
    pub fn reseeded(&self, seed: u64) -> Self {
        ModelConfig {
            init_seed: seed,
            sampling_seed: derive_seed(&[seed, 1]),
            data_seed: derive_seed(&[seed, 2]),
            ..self.clone()
        }
    }

    fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            ..AdamConfig::default()
        }
    }
}

/// Xavier-uniform `V×D` table and its PCA projection to `d`, seeded from
/// `init_seed`.
pub fn embedding_table(vocab_size: usize, cfg: &ModelConfig) -> Result<EmbeddingTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.init_seed, 0xE4B]));
    Ok(EmbeddingTable::random(vocab_size, cfg.dim, cfg.tiny_dim, &mut rng)?)
}

/// One row of the metrics CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub phase: String,
    pub epoch: usize,
    pub step: usize,
    pub loss: Option<f64>,
    pub accuracy: f64,
    pub macro_f: f64,
    /// Only filled when timing is requested, so bodies stay reproducible.
    pub ms_per_iter: Option<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct RunMetrics {
    pub rows: Vec<MetricRow>,
    /// Mean wall-clock per optimizer step, per phase.
    pub ms_per_iter: HashMap<String, f64>,
}

impl RunMetrics {
    pub fn extend(&mut self, other: RunMetrics) {
        self.rows.extend(other.rows);
        self.ms_per_iter.extend(other.ms_per_iter);
    }

    /// Rows with timing columns cleared unless `timing` is set.
    pub fn csv_rows(&self, timing: bool) -> Vec<MetricRow> {
        self.rows
            .iter()
            .cloned()
            .map(|mut r| {
                if !timing {
                    r.ms_per_iter = None;
                }
                r
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub macro_f: f64,
    pub n: usize,
}

/// Accuracy and macro-F1. A class with no true and no predicted examples
/// scores F1 = 0.
pub fn classification_metrics(preds: &[usize], labels: &[usize], n_classes: usize) -> EvalMetrics {
    assert_eq!(preds.len(), labels.len());
    let n = preds.len();
    let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    let mut tp = vec![0usize; n_classes];
    let mut fp = vec![0usize; n_classes];
    let mut fn_ = vec![0usize; n_classes];
    for (&p, &l) in preds.iter().zip(labels) {
        if p == l {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[l] += 1;
        }
    }
    let f1: f64 = (0..n_classes)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fn_[c];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .sum();
    EvalMetrics {
        accuracy: if n == 0 { 0.0 } else { correct as f64 / n as f64 },
        macro_f: f1 / n_classes as f64,
        n,
    }
}

/// Anything that labels an example. `index` is the example's position in
/// its dataset and seeds any sampling.
pub trait Classifier: Sync {
    fn classify(&self, example: &Example, index: usize, eval_seed: u64) -> Result<usize>;
}

impl Classifier for SketchModel<f32> {
    fn classify(&self, example: &Example, _index: usize, _eval_seed: u64) -> Result<usize> {
        Ok(self.predict(example)?)
    }
}

impl Classifier for EncoderModel<f32> {
    fn classify(&self, example: &Example, _index: usize, _eval_seed: u64) -> Result<usize> {
        Ok(self.predict(example, AttentionMode::Dense)?)
    }
}

impl Classifier for SmartBird {
    fn classify(&self, example: &Example, index: usize, eval_seed: u64) -> Result<usize> {
        Ok(self.predict(example, derive_seed(&[eval_seed, index as u64]))?)
    }
}

/// Deterministic evaluation; `threads > 1` splits the examples across
/// scoped worker threads.
pub fn evaluate<C: Classifier + ?Sized>(model: &C, data: &Dataset, eval_seed: u64, threads: usize) -> Result<EvalMetrics> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let preds = predict_all(model, &data.examples, eval_seed, threads)?;
    let labels: Vec<usize> = data.examples.iter().map(|e| e.label).collect();
    Ok(classification_metrics(&preds, &labels, data.n_classes))
}

pub fn predict_all<C: Classifier + ?Sized>(
    model: &C,
    examples: &[Example],
    eval_seed: u64,
    threads: usize,
) -> Result<Vec<usize>> {
    let threads = threads.clamp(1, examples.len().max(1));
    if threads == 1 {
        return examples
            .iter()
            .enumerate()
            .map(|(i, e)| model.classify(e, i, eval_seed))
            .collect();
    }
    let chunk = examples.len().div_ceil(threads);
    let parts: Vec<Result<Vec<usize>>> = std::thread::scope(|s| {
        let handles: Vec<_> = examples
            .chunks(chunk)
            .enumerate()
            .map(|(c, part)| {
                s.spawn(move || {
                    part.iter()
                        .enumerate()
                        .map(|(i, e)| model.classify(e, c * chunk + i, eval_seed))
                        .collect()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(examples.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Position of an example in the training set and the epoch it is seen in.
#[derive(Clone, Copy, Debug)]
pub struct StepContext {
    pub epoch: usize,
    pub example: usize,
}

/// Mini-batch Adam over per-example tapes. `loss_fn` records one example's
/// loss and logits; gradients are averaged over the batch and clipped.
fn fit<M>(
    phase: &str,
    model: &mut M,
    store_of: fn(&mut M) -> &mut ParamStore<f32>,
    train: &Dataset,
    epochs: usize,
    lr: f64,
    cfg: &ModelConfig,
    mut loss_fn: impl FnMut(&M, &mut Tape<f32>, &Example, StepContext) -> Result<(Var, Var)>,
) -> Result<RunMetrics> {
    if train.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut adam = Adam::new(cfg.adam(lr), store_of(model));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut metrics = RunMetrics::default();
    let mut step = 0usize;
    let mut total_ms = 0.0;
    for epoch in 0..epochs {
        let mut shuffle = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.data_seed, epoch as u64]));
        order.shuffle(&mut shuffle);
        let mut loss_sum = 0.0;
        let mut preds = Vec::with_capacity(train.len());
        let mut labels = Vec::with_capacity(train.len());
        let mut epoch_ms = 0.0;
        let mut epoch_steps = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let t0 = Instant::now();
            store_of(model).zero_grad();
            for &i in batch {
                let ex = &train.examples[i];
                let mut tape = Tape::new();
                let (loss, logits) = loss_fn(model, &mut tape, ex, StepContext { epoch, example: i })?;
                let l = tape.value(loss).data()[0] as f64;
                if !l.is_finite() || tape.nan_detected() {
                    return Err(TrainError::Divergence {
                        phase: phase.to_string(),
                        epoch,
                        step,
                        loss: l,
                    });
                }
                tape.backward(loss)?;
                store_of(model).accumulate_grads(&tape);
                loss_sum += l;
                preds.push(argmax(tape.value(logits).data()));
                labels.push(ex.label);
            }
            let store = store_of(model);
            store.scale_grads(1.0 / batch.len() as f64);
            clip_grad_norm(store, cfg.clip_norm);
            adam.step(store)?;
            step += 1;
            epoch_steps += 1;
            epoch_ms += t0.elapsed().as_secs_f64() * 1e3;
        }
        total_ms += epoch_ms;
        let m = classification_metrics(&preds, &labels, train.n_classes);
        metrics.rows.push(MetricRow {
            phase: phase.to_string(),
            epoch,
            step,
            loss: Some(loss_sum / train.len() as f64),
            accuracy: m.accuracy,
            macro_f: m.macro_f,
            ms_per_iter: Some(epoch_ms / epoch_steps.max(1) as f64),
        });
    }
    if step > 0 {
        metrics.ms_per_iter.insert(phase.to_string(), total_ms / step as f64);
    }
    Ok(metrics)
}

fn check_dataset(train: &Dataset, cfg: &ModelConfig) -> Result<()> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if train.max_len() > cfg.max_len {
        return Err(TrainError::Config(format!(
            "examples have length {} but max_len is {}",
            train.max_len(),
            cfg.max_len
        )));
    }
    Ok(())
}

/// Sketch model initialized from `table.tiny`, before any training.
pub fn init_sketch(train: &Dataset, table: &EmbeddingTable, cfg: &ModelConfig) -> Result<SketchModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.init_seed, 0x5E7C]));
    Ok(SketchModel::new(
        cfg.sketch_config(train.vocab.len(), train.n_classes),
        table.tiny.clone(),
        &mut rng,
    )?)
}

/// Encoder initialized from `table.full`, before any training.
pub fn init_encoder(train: &Dataset, table: &EmbeddingTable, cfg: &ModelConfig) -> Result<EncoderModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.init_seed, 0xE2C]));
    Ok(EncoderModel::new(
        cfg.encoder_config(train.vocab.len(), train.n_classes),
        table.full.clone(),
        &mut rng,
    )?)
}

/// Phase one: trains the sketch model on the task.
pub fn train_sketch(train: &Dataset, table: &EmbeddingTable, cfg: &ModelConfig) -> Result<(SketchModel, RunMetrics)> {
    check_dataset(train, cfg)?;
    let mut model = init_sketch(train, table, cfg)?;
    let epochs = cfg.sketch_epochs.unwrap_or(cfg.epochs);
    let lr = cfg.sketch_lr.unwrap_or(cfg.lr);
    let metrics = fit(
        "sketch",
        &mut model,
        |m| &mut m.store,
        train,
        epochs,
        lr,
        cfg,
        |m, tape, ex, _| Ok(m.loss(tape, ex)?),
    )?;
    // The returned model is frozen; leftover gradients would only mislead.
    model.store.zero_grad();
    Ok((model, metrics))
}

/// Phase two: trains a sparse encoder whose keys are sampled from the frozen
/// sketch's attention, resampled at every step.
pub fn train_smartbird(
    train: &Dataset,
    table: &EmbeddingTable,
    sketch: SketchModel,
    cfg: &ModelConfig,
) -> Result<(SmartBird, RunMetrics)> {
    check_dataset(train, cfg)?;
    if sketch.cfg.vocab_size != train.vocab.len() {
        return Err(TrainError::Config(format!(
            "sketch vocabulary has {} entries, dataset {}",
            sketch.cfg.vocab_size,
            train.vocab.len()
        )));
    }
    let encoder = init_encoder(train, table, cfg)?;
    let mut model = SmartBird::new(sketch, encoder, cfg.sampling_config())?;
    let mut cache: HashMap<usize, Vec<AttentionMatrix>> = HashMap::new();
    let metrics = fit(
        "smart",
        &mut model,
        |m| &mut m.encoder.store,
        train,
        cfg.epochs,
        cfg.lr,
        cfg,
        |m, tape, ex, ctx| {
            let seed = derive_seed(&[cfg.sampling_seed, ctx.epoch as u64, ctx.example as u64]);
            let idx = if cfg.cache_sketch {
                let attn = match cache.get(&ctx.example) {
                    Some(a) => a,
                    None => cache.entry(ctx.example).or_insert(m.sketch.attention(ex)?),
                };
                m.indices_from(attn, seed)
            } else {
                m.indices(ex, seed)?
            };
            let mut drop = dropout_rng(cfg, ctx);
            Ok(m.encoder.loss(tape, ex, AttentionMode::Sparse(&idx), Some(&mut drop))?)
        },
    )?;
    Ok((model, metrics))
}

/// Dense multi-head baseline with the same width, depth and head.
pub fn train_dense_baseline(train: &Dataset, table: &EmbeddingTable, cfg: &ModelConfig) -> Result<(EncoderModel, RunMetrics)> {
    check_dataset(train, cfg)?;
    let mut model = init_encoder(train, table, cfg)?;
    let metrics = fit(
        "dense",
        &mut model,
        |m| &mut m.store,
        train,
        cfg.epochs,
        cfg.lr,
        cfg,
        |m, tape, ex, ctx| {
            let mut drop = dropout_rng(cfg, ctx);
            Ok(m.loss(tape, ex, AttentionMode::Dense, Some(&mut drop))?)
        },
    )?;
    Ok((model, metrics))
}

fn dropout_rng(cfg: &ModelConfig, ctx: StepContext) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.data_seed, 0xD40, ctx.epoch as u64, ctx.example as u64]))
}

/// Metric row for a held-out evaluation.
pub fn eval_row(phase: &str, epoch: usize, step: usize, m: &EvalMetrics) -> MetricRow {
    MetricRow {
        phase: phase.to_string(),
        epoch,
        step,
        loss: None,
        accuracy: m.accuracy,
        macro_f: m.macro_f,
        ms_per_iter: None,
    }
}

/// Which model a full run trains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Smart,
    Dense,
}

/// Trained artifacts of [`run_training`].
#[derive(Clone, Debug)]
pub enum Trained {
    Smart(SmartBird),
    Dense(EncoderModel),
}

impl Trained {
    pub fn classifier(&self) -> &dyn Classifier {
        match self {
            Trained::Smart(m) => m,
            Trained::Dense(m) => m,
        }
    }
}

/// Full run: sketch then sparse for `Smart`, or the dense baseline, followed
/// by evaluation on `test` when given.
pub fn run_training(
    train: &Dataset,
    test: Option<&Dataset>,
    table: &EmbeddingTable,
    cfg: &ModelConfig,
    kind: ModelKind,
) -> Result<(Trained, RunMetrics)> {
    let mut metrics = RunMetrics::default();
    let trained = match kind {
        ModelKind::Smart => {
            let (sketch, m1) = train_sketch(train, table, cfg)?;
            metrics.extend(m1);
            let (smart, m2) = train_smartbird(train, table, sketch, cfg)?;
            metrics.extend(m2);
            Trained::Smart(smart)
        }
        ModelKind::Dense => {
            let (dense, m) = train_dense_baseline(train, table, cfg)?;
            metrics.extend(m);
            Trained::Dense(dense)
        }
    };
    if let Some(test) = test {
        let m = evaluate(trained.classifier(), test, cfg.eval_seed, cfg.threads)?;
        let step = metrics.rows.last().map_or(0, |r| r.step);
        metrics.rows.push(eval_row("test", cfg.epochs, step, &m));
    }
    Ok((trained, metrics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textpipe::{synth_task, SynthConfig};

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            tiny_dim: 4,
            dim: 8,
            heads: 2,
            k: 3,
            layers: 1,
            max_len: 12,
            lr: 1e-3,
            batch_size: 4,
            epochs: 1,
            dropout: 0.1,
            ..Default::default()
        }
    }

    fn data(n: usize) -> Dataset {
        synth_task(&SynthConfig {
            n_examples: n,
            seq_len: 12,
            vocab_size: 16,
            pair_gap: 3,
            n_classes: 2,
            seed: 5,
        })
        .unwrap()
        .0
    }

    #[test]
    fn metric_hand_cases() {
        let m = classification_metrics(&[0, 1, 1], &[0, 1, 1], 2);
        assert_eq!((m.accuracy, m.macro_f), (1.0, 1.0));
        let m = classification_metrics(&[0, 0, 0, 0], &[0, 0, 1, 1], 2);
        assert_eq!(m.accuracy, 0.5);
        assert!((m.macro_f - 1.0 / 3.0).abs() < 1e-12);
        let m = classification_metrics(&[0, 1], &[0, 0], 2);
        assert_eq!(m.accuracy, 0.5);
        assert!((m.macro_f - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn defaults_and_validation() {
        let c = ModelConfig::default();
        assert_eq!((c.tiny_dim, c.dim, c.heads, c.k, c.layers), (4, 256, 8, 20, 2));
        assert_eq!((c.lr, c.batch_size, c.epochs, c.dropout), (1e-4, 64, 2, 0.2));
        c.validate().unwrap();
        assert!(ModelConfig { heads: 3, ..c.clone() }.validate().is_err());
        assert!(ModelConfig { k: 0, ..c.clone() }.validate().is_err());
        let err = serde_json::from_str::<ModelConfig>(r#"{"bogus": 1}"#);
        assert!(err.is_err());
        let parsed: ModelConfig = serde_json::from_str(r#"{"k": 5}"#).unwrap();
        assert_eq!(parsed.k, 5);
        assert_eq!(parsed.dim, 256);
    }

    #[test]
    fn zero_epochs_leave_initialization() {
        let d = data(8);
        let cfg = ModelConfig { epochs: 0, ..tiny_cfg() };
        let table = embedding_table(d.vocab.len(), &cfg).unwrap();
        let (m, metrics) = train_sketch(&d, &table, &cfg).unwrap();
        let init = init_sketch(&d, &table, &cfg).unwrap();
        assert!(metrics.rows.is_empty());
        for (a, b) in m.store.iter().zip(init.store.iter()) {
            assert_eq!(a.value, b.value);
        }
        let (dense, _) = train_dense_baseline(&d, &table, &cfg).unwrap();
        let init = init_encoder(&d, &table, &cfg).unwrap();
        for (a, b) in dense.store.iter().zip(init.store.iter()) {
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn training_is_deterministic_and_sketch_stays_frozen() {
        let d = data(12);
        let cfg = tiny_cfg();
        let table = embedding_table(d.vocab.len(), &cfg).unwrap();
        let run = || {
            let (sk, m1) = train_sketch(&d, &table, &cfg).unwrap();
            let (sb, m2) = train_smartbird(&d, &table, sk, &cfg).unwrap();
            (sb, m1, m2)
        };
        let (a, a1, a2) = run();
        let (b, b1, b2) = run();
        assert_eq!(a1.rows.len(), 1);
        assert_eq!(a1.csv_rows(false), b1.csv_rows(false));
        assert_eq!(a2.csv_rows(false), b2.csv_rows(false));
        for (x, y) in a.encoder.store.iter().zip(b.encoder.store.iter()) {
            assert_eq!(x.value, y.value);
        }
        assert!(!a.sketch.store.has_any_grad());
    }

    #[test]
    fn cached_sketch_matches_fresh_sketch() {
        let d = data(8);
        let cfg = tiny_cfg();
        let table = embedding_table(d.vocab.len(), &cfg).unwrap();
        let (sk, _) = train_sketch(&d, &table, &cfg).unwrap();
        let (a, _) = train_smartbird(&d, &table, sk.clone(), &cfg).unwrap();
        let cached = ModelConfig { cache_sketch: true, ..cfg.clone() };
        let (b, _) = train_smartbird(&d, &table, sk, &cached).unwrap();
        for (x, y) in a.encoder.store.iter().zip(b.encoder.store.iter()) {
            assert_eq!(x.value, y.value);
        }
    }

    #[test]
    fn evaluation_is_deterministic_across_threads() {
        let d = data(10);
        let cfg = tiny_cfg();
        let table = embedding_table(d.vocab.len(), &cfg).unwrap();
        let (t, _) = run_training(&d, None, &table, &cfg, ModelKind::Smart).unwrap();
        let one = predict_all(t.classifier(), &d.examples, 9, 1).unwrap();
        let three = predict_all(t.classifier(), &d.examples, 9, 3).unwrap();
        assert_eq!(one, three);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let mut d = data(2);
        d.examples.clear();
        let cfg = tiny_cfg();
        let table = embedding_table(d.vocab.len(), &cfg).unwrap();
        assert!(matches!(train_sketch(&d, &table, &cfg), Err(TrainError::EmptyDataset)));
    }
}
