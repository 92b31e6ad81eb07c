//! Wall-clock scaling of one dense layer against the sketch, sampling and
//! sparse-layer stack.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AnalysisError, Result};
use crate::sampler::{build_layer_indices, IndexMatrix, SamplingConfig, SamplingStrategy};
use crate::sketch::{SketchConfig, SketchModel};
use crate::sparse::{EncoderConfig, EncoderModel};
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Ascending sequence lengths.
    pub grid: Vec<usize>,
    pub reps: usize,
    pub tiny_dim: usize,
    pub dim: usize,
    pub heads: usize,
    pub k: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            grid: vec![128, 256, 512, 1024, 2048],
            reps: 3,
            tiny_dim: 4,
            dim: 32,
            heads: 4,
            k: 20,
            seed: 0,
        }
    }
}

/// Median milliseconds per component at one sequence length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n: usize,
    /// Dense layer, forward and backward.
    pub dense_ms: f64,
    /// Sketch layer forward (frozen, no gradients).
    pub sketch_ms: f64,
    /// Index sampling for every head.
    pub sampling_ms: f64,
    /// Sparse layer, forward and backward.
    pub sparse_ms: f64,
    pub smart_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossoverReport {
    pub rows: Vec<BenchRow>,
    pub dense_slope: f64,
    pub sparse_slope: f64,
    pub smart_slope: f64,
    /// Smallest grid length where the smart stack beats the dense layer.
    pub crossover_n: Option<usize>,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 || x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(AnalysisError::Undefined("log-log slope needs two or more positive points".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(AnalysisError::Undefined("all lengths equal".into()));
    }
    Ok(sxy / sxx)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let l = v.len();
    if l % 2 == 1 {
        v[l / 2]
    } else {
        0.5 * (v[l / 2 - 1] + v[l / 2])
    }
}

fn time_ms(mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    let t = Instant::now();
    f()?;
    Ok(t.elapsed().as_secs_f64() * 1e3)
}

/// Times each component at every grid length and fits log-log slopes.
pub fn measured_crossover(cfg: &BenchConfig) -> Result<CrossoverReport> {
    if cfg.grid.is_empty() || cfg.grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(AnalysisError::Config("grid must be non-empty and strictly ascending".into()));
    }
    if cfg.reps == 0 {
        return Err(AnalysisError::Config("reps must be at least 1".into()));
    }
    let max_n = *cfg.grid.last().expect("non-empty");
    let vocab = 64;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let encoder = EncoderModel::random(
        EncoderConfig {
            vocab_size: vocab,
            dim: cfg.dim,
            heads: cfg.heads,
            layers: 1,
            n_classes: 2,
            max_len: max_n,
            positions: true,
            dropout: 0.0,
        },
        &mut rng,
    )?;
    let sketch = SketchModel::random(
        SketchConfig {
            vocab_size: vocab,
            dim: cfg.tiny_dim,
            layers: 1,
            n_classes: 2,
            max_len: max_n,
            positions: true,
        },
        &mut rng,
    )?;
    let sampling = SamplingConfig {
        strategy: SamplingStrategy::SquaredInvLog,
        k: cfg.k,
        heads: cfg.heads,
        include_self: false,
    };
    let layer = &encoder.layers[0];
    let mut rows = Vec::with_capacity(cfg.grid.len());
    for &n in &cfg.grid {
        let x = Tensor::<f32>::from_fn([n, cfg.dim], |_| rng.gen_range(-1.0..1.0));
        let ids: Vec<u32> = (0..n).map(|_| rng.gen_range(2..vocab as u32)).collect();
        let mut samples = [vec![], vec![], vec![], vec![]];
        for rep in 0..cfg.reps {
            let layer_pass = |idx: Option<&[IndexMatrix]>| -> Result<()> {
                let mut tape = Tape::new();
                let xv = tape.leaf(x.clone());
                let (y, _) = layer.forward(&mut tape, &encoder.store, xv, n, idx, None)?;
                let s = tape.sum(y);
                tape.backward(s)?;
                Ok(())
            };
            samples[0].push(time_ms(|| layer_pass(None))?);
            let mut attn = Vec::new();
            samples[1].push(time_ms(|| {
                let mut tape = Tape::no_grad();
                let pass = sketch.forward(&mut tape, &ids, n)?;
                let w = tape.value(pass.attention[0]).data().to_vec();
                attn = vec![crate::sketch::AttentionMatrix::new(n, n, w)];
                Ok(())
            })?);
            let mut idx = Vec::new();
            samples[2].push(time_ms(|| {
                idx = build_layer_indices(&attn, &sampling, cfg.seed + rep as u64);
                Ok(())
            })?);
            samples[3].push(time_ms(|| layer_pass(Some(&idx[0])))?);
        }
        let [dense, sk, sa, sp] = samples.map(median);
        rows.push(BenchRow {
            n,
            dense_ms: dense,
            sketch_ms: sk,
            sampling_ms: sa,
            sparse_ms: sp,
            smart_ms: sk + sa + sp,
        });
    }
    let ns: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let slope = |f: fn(&BenchRow) -> f64| loglog_slope(&ns, &rows.iter().map(f).collect::<Vec<_>>());
    let (dense_slope, sparse_slope, smart_slope) = if rows.len() >= 2 {
        (slope(|r| r.dense_ms)?, slope(|r| r.sparse_ms)?, slope(|r| r.smart_ms)?)
    } else {
        (f64::NAN, f64::NAN, f64::NAN)
    };
    let crossover_n = rows.iter().find(|r| r.smart_ms < r.dense_ms).map(|r| r.n);
    Ok(CrossoverReport {
        rows,
        dense_slope,
        sparse_slope,
        smart_slope,
        crossover_n,
    })
}
