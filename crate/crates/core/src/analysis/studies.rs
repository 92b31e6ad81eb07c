//! Multi-seed experiments on a train/test split: attention correlation,
//! strategy ablation and K sweep.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::flops::{flops_model, Architecture, FlopParams};
use super::stats::{correlate_pairs, score_histogram, PairCorrelation, ScoreHistogram, Summary};
use super::{AnalysisError, Result};
use crate::sampler::{derive_seed, SamplingStrategy};
use crate::sketch::{AttentionMatrix, SketchModel};
use crate::trainer::{
    embedding_table, evaluate, train_dense_baseline, train_sketch, train_smartbird, EvalMetrics, ModelConfig,
};
use crate::textpipe::Dataset;

fn check(train: &Dataset, test: &Dataset, seeds: &[u64]) -> Result<()> {
    if seeds.is_empty() {
        return Err(AnalysisError::Empty("seed list"));
    }
    if train.is_empty() || test.is_empty() {
        return Err(AnalysisError::Empty("dataset"));
    }
    Ok(())
}

fn seeded_sketch(train: &Dataset, cfg: &ModelConfig) -> Result<(SketchModel, crate::textpipe::EmbeddingTable)> {
    let table = embedding_table(train.vocab.len(), cfg)?;
    let (sketch, _) = train_sketch(train, &table, cfg)?;
    Ok((sketch, table))
}

/// Attention agreement between trained sketch and dense models, with dense
/// models of other seeds as the reproducibility control and row shuffling as
/// the chance control.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub seeds: usize,
    pub examples: usize,
    pub layers: usize,
    /// Every (seed, example, layer) pair pooled.
    pub sketch_vs_dense: PairCorrelation,
    /// Summaries per layer, unshuffled then shuffled.
    pub per_layer: Vec<(Summary, Summary)>,
    /// Dense models of consecutive seeds; present with two or more seeds.
    pub dense_vs_dense: Option<PairCorrelation>,
    /// Test accuracies, averaged over seeds.
    pub sketch_accuracy: f64,
    pub dense_accuracy: f64,
}

/// One CSV row of a correlation study. `layer` is empty for pooled rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub comparison: String,
    pub layer: Option<usize>,
    pub n: usize,
    pub undefined: usize,
    pub mean_r: f64,
    pub std_r: f64,
    pub shuffled_mean_r: f64,
    pub shuffled_std_r: f64,
}

impl CorrelationReport {
    pub fn rows(&self) -> Vec<CorrelationRow> {
        let row = |name: &str, layer, c: &Summary, s: &Summary| CorrelationRow {
            comparison: name.to_string(),
            layer,
            n: c.n,
            undefined: c.undefined,
            mean_r: c.mean,
            std_r: c.std,
            shuffled_mean_r: s.mean,
            shuffled_std_r: s.std,
        };
        let mut out = vec![row(
            "sketch_vs_dense",
            None,
            &self.sketch_vs_dense.summary,
            &self.sketch_vs_dense.shuffled,
        )];
        for (l, s) in self.per_layer.iter().enumerate() {
            out.push(row("sketch_vs_dense", Some(l), &s.0, &s.1));
        }
        if let Some(c) = &self.dense_vs_dense {
            out.push(row("dense_vs_dense", None, &c.summary, &c.shuffled));
        }
        out
    }
}

/// For every seed, trains a `tiny_dim` sketch and a `dim` dense model, then
/// correlates their per-layer attention (dense heads averaged) on the first
/// `max_examples` test examples. Pairs are pooled over seeds. With two or
/// more seeds, dense models of consecutive seeds are also compared.
pub fn correlation_study(
    train: &Dataset,
    test: &Dataset,
    cfg: &ModelConfig,
    seeds: &[u64],
    max_examples: usize,
) -> Result<CorrelationReport> {
    check(train, test, seeds)?;
    let examples = &test.examples[..max_examples.min(test.len())];
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seeds[0], 0x5AFF]));

    let mut pairs: Vec<(AttentionMatrix, AttentionMatrix)> = Vec::new();
    let mut by_layer: Vec<Vec<(AttentionMatrix, AttentionMatrix)>> = vec![Vec::new(); cfg.layers];
    let mut dense_attention: Vec<Vec<AttentionMatrix>> = Vec::new();
    let (mut sketch_accuracy, mut dense_accuracy) = (0.0, 0.0);
    for &seed in seeds {
        let cfg_s = cfg.reseeded(seed);
        let (sketch, table) = seeded_sketch(train, &cfg_s)?;
        let (dense, _) = train_dense_baseline(train, &table, &cfg_s)?;
        let mut this_dense = Vec::new();
        for ex in examples {
            let a = sketch.attention(ex)?;
            let b = dense.head_averaged_attention(ex)?;
            for (l, (x, y)) in a.into_iter().zip(b).enumerate() {
                by_layer[l].push((x.clone(), y.clone()));
                pairs.push((x, y.clone()));
                this_dense.push(y);
            }
        }
        dense_attention.push(this_dense);
        sketch_accuracy += evaluate(&sketch, test, cfg.eval_seed, cfg.threads)?.accuracy;
        dense_accuracy += evaluate(&dense, test, cfg.eval_seed, cfg.threads)?.accuracy;
    }
    let sketch_vs_dense = correlate_pairs(&pairs, &mut rng);
    let per_layer = by_layer
        .iter()
        .map(|p| {
            let c = correlate_pairs(p, &mut rng);
            (c.summary, c.shuffled)
        })
        .collect();
    let dense_vs_dense = (seeds.len() > 1).then(|| {
        let pairs: Vec<_> = dense_attention
            .windows(2)
            .flat_map(|w| w[0].iter().cloned().zip(w[1].iter().cloned()))
            .collect();
        correlate_pairs(&pairs, &mut rng)
    });
    let n = seeds.len() as f64;
    Ok(CorrelationReport {
        seeds: seeds.len(),
        examples: examples.len(),
        layers: cfg.layers,
        sketch_vs_dense,
        per_layer,
        dense_vs_dense,
        sketch_accuracy: sketch_accuracy / n,
        dense_accuracy: dense_accuracy / n,
    })
}

/// Test metrics of one trained smart model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub strategy: SamplingStrategy,
    pub seed: u64,
    pub accuracy: f64,
    pub macro_f: f64,
}

/// Mean and sample standard deviation over seeds for one strategy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub strategy: SamplingStrategy,
    pub seeds: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_macro_f: f64,
    pub std_macro_f: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub runs: Vec<AblationRun>,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, s: SamplingStrategy) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.strategy == s)
    }
}

fn summarize(acc: &[f64], f: &[f64]) -> (Summary, Summary) {
    (Summary::of(acc, 0), Summary::of(f, 0))
}

/// Trains one smart model per (strategy, seed). The sketch depends only on
/// the seed, so each seed's sketch is trained once and shared.
pub fn ablation_run(
    train: &Dataset,
    test: &Dataset,
    cfg: &ModelConfig,
    strategies: &[SamplingStrategy],
    seeds: &[u64],
) -> Result<AblationReport> {
    check(train, test, seeds)?;
    if strategies.is_empty() {
        return Err(AnalysisError::Empty("strategy list"));
    }
    let mut runs = Vec::new();
    for &seed in seeds {
        let cfg_s = cfg.reseeded(seed);
        let (sketch, table) = seeded_sketch(train, &cfg_s)?;
        for &strategy in strategies {
            let run_cfg = ModelConfig { strategy, ..cfg_s.clone() };
            let (model, _) = train_smartbird(train, &table, sketch.clone(), &run_cfg)?;
            let m = evaluate(&model, test, cfg.eval_seed, cfg.threads)?;
            runs.push(AblationRun {
                strategy,
                seed,
                accuracy: m.accuracy,
                macro_f: m.macro_f,
            });
        }
    }
    let rows = strategies
        .iter()
        .map(|&s| {
            let (acc, f): (Vec<f64>, Vec<f64>) = runs
                .iter()
                .filter(|r| r.strategy == s)
                .map(|r| (r.accuracy, r.macro_f))
                .unzip();
            let (a, b) = summarize(&acc, &f);
            AblationRow {
                strategy: s,
                seeds: a.n,
                mean_accuracy: a.mean,
                std_accuracy: a.std,
                mean_macro_f: b.mean,
                std_macro_f: b.std,
            }
        })
        .collect();
    Ok(AblationReport { runs, rows })
}

/// Accuracy and FLOP counts for one K.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KSweepRow {
    pub k: usize,
    pub seeds: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_macro_f: f64,
    pub std_macro_f: f64,
    /// Sequence length the FLOP columns are computed at.
    pub n: usize,
    pub smart_flops: u64,
    pub smart_dominant_flops: u64,
    pub dense_flops: u64,
}

/// Trains one smart model per (K, seed), sharing each seed's sketch.
/// FLOP columns use the longest valid length in `test`.
pub fn k_sweep(train: &Dataset, test: &Dataset, cfg: &ModelConfig, ks: &[usize], seeds: &[u64]) -> Result<Vec<KSweepRow>> {
    check(train, test, seeds)?;
    if ks.is_empty() || ks[0] == 0 || ks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(AnalysisError::Config("K values must be positive and strictly ascending".into()));
    }
    let n = test.examples.iter().map(|e| e.attn_len).max().unwrap_or(0);
    let mut metrics: Vec<Vec<EvalMetrics>> = vec![Vec::new(); ks.len()];
    for &seed in seeds {
        let cfg_s = cfg.reseeded(seed);
        let (sketch, table) = seeded_sketch(train, &cfg_s)?;
        for (i, &k) in ks.iter().enumerate() {
            let run_cfg = ModelConfig { k, ..cfg_s.clone() };
            let (model, _) = train_smartbird(train, &table, sketch.clone(), &run_cfg)?;
            metrics[i].push(evaluate(&model, test, cfg.eval_seed, cfg.threads)?);
        }
    }
    Ok(ks
        .iter()
        .zip(&metrics)
        .map(|(&k, ms)| {
            let acc: Vec<f64> = ms.iter().map(|m| m.accuracy).collect();
            let f: Vec<f64> = ms.iter().map(|m| m.macro_f).collect();
            let (a, b) = summarize(&acc, &f);
            let p = FlopParams::from_config(&ModelConfig { k, ..cfg.clone() }, n);
            let smart = flops_model(&p, Architecture::Smart);
            KSweepRow {
                k,
                seeds: a.n,
                mean_accuracy: a.mean,
                std_accuracy: a.std,
                mean_macro_f: b.mean,
                std_macro_f: b.std,
                n,
                smart_flops: smart.total,
                smart_dominant_flops: smart.dominant,
                dense_flops: flops_model(&p, Architecture::Dense).total,
            }
        })
        .collect())
}

/// Score distributions of a sketch's attention over the first
/// `max_examples` examples of `data`.
pub fn sketch_score_histogram(
    sketch: &SketchModel,
    data: &Dataset,
    max_examples: usize,
    bins: usize,
) -> Result<ScoreHistogram> {
    let mut batch = Vec::new();
    for ex in data.examples.iter().take(max_examples) {
        batch.extend(sketch.attention(ex)?);
    }
    score_histogram(&batch, bins)
}

/// One histogram bin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub quantity: String,
    pub bin: usize,
    pub lo: f64,
    pub hi: f64,
    pub count: u64,
}

pub fn histogram_rows(h: &ScoreHistogram) -> Vec<HistogramRow> {
    [&h.alpha, &h.inv_log, &h.squared_inv_log]
        .into_iter()
        .flat_map(|d| {
            d.histogram.counts.iter().enumerate().map(|(b, &count)| HistogramRow {
                quantity: d.name.clone(),
                bin: b,
                lo: d.histogram.edges[b],
                hi: d.histogram.edges[b + 1],
                count,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textpipe::{synth_task, SynthConfig};

    fn data(seed: u64, n: usize) -> Dataset {
        synth_task(&SynthConfig {
            n_examples: n,
            seq_len: 10,
            vocab_size: 16,
            pair_gap: 2,
            n_classes: 2,
            seed,
        })
        .unwrap()
        .0
    }

    fn cfg() -> ModelConfig {
        ModelConfig {
            dim: 8,
            heads: 2,
            k: 3,
            layers: 1,
            max_len: 10,
            lr: 1e-3,
            batch_size: 4,
            epochs: 1,
            dropout: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn ablation_has_one_row_per_strategy() {
        let r = ablation_run(&data(0, 12), &data(1, 6), &cfg(), &SamplingStrategy::ALL, &[3]).unwrap();
        assert_eq!(r.rows.len(), 5);
        assert_eq!(r.runs.len(), 5);
        assert!(r.rows.iter().all(|x| x.mean_accuracy.is_finite() && x.mean_macro_f.is_finite()));
    }

    #[test]
    fn k_sweep_flops_increase() {
        let rows = k_sweep(&data(0, 8), &data(1, 4), &cfg(), &[1, 3, 10], &[0]).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.windows(2).all(|w| w[0].smart_flops < w[1].smart_flops));
        assert!(rows.iter().all(|r| r.dense_flops == rows[0].dense_flops && r.n == 10));
        assert!(k_sweep(&data(0, 8), &data(1, 4), &cfg(), &[3, 1], &[0]).is_err());
    }

    #[test]
    fn correlation_study_is_well_formed() {
        let r = correlation_study(&data(0, 8), &data(1, 5), &cfg(), &[0, 1], 3).unwrap();
        assert_eq!(r.examples, 3);
        assert_eq!(r.seeds, 2);
        assert_eq!(r.sketch_vs_dense.r.len() + r.sketch_vs_dense.summary.undefined, 2 * 3 * r.layers);
        assert!(r.sketch_vs_dense.r.iter().all(|x| (-1.0..=1.0).contains(x)));
        assert!(r.dense_vs_dense.is_some());
        assert_eq!(r.rows().len(), 3);
    }

    #[test]
    fn histogram_rows_cover_all_values() {
        let c = cfg();
        let d = data(0, 4);
        let (sketch, _) = seeded_sketch(&d, &c).unwrap();
        let h = sketch_score_histogram(&sketch, &d, 4, 8).unwrap();
        let rows = histogram_rows(&h);
        let alpha: u64 = rows.iter().filter(|r| r.quantity == "alpha").map(|r| r.count).sum();
        assert_eq!(alpha + h.alpha.histogram.nonpositive, 4 * 100);
    }
}
