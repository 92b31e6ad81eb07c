use std::collections::HashMap;

use rand::Rng;

use crate::tensor::Tensor;

use super::{pca_project, PcaOptions, Result, Vocab, PAD};

/// Uniform in `±sqrt(6 / (rows + cols))`.
pub fn xavier_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor<f32> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::from_fn([rows, cols], |_| rng.gen_range(-limit..limit) as f32)
}

/// Token embeddings for the full model (`V×D`) and their PCA projection for
/// the sketch model (`V×d`). Row `PAD` is zero in both.
#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    pub full: Tensor<f32>,
    pub tiny: Tensor<f32>,
    /// Fraction of the full table's variance kept by the projection.
    pub explained_variance: f64,
}

impl EmbeddingTable {
    pub fn from_full(mut full: Tensor<f32>, tiny_dim: usize) -> Result<Self> {
        let (_, dim) = full.dims2()?;
        zero_row(&mut full, PAD as usize);
        let pca = pca_project(&full, tiny_dim, PcaOptions::default())?;
        let mut tiny = pca.projected;
        zero_row(&mut tiny, PAD as usize);
        let total = total_variance(&full, dim);
        let kept: f64 = pca.eigenvalues.iter().sum();
        Ok(EmbeddingTable {
            full,
            tiny,
            explained_variance: if total > 0.0 { kept / total } else { 1.0 },
        })
    }

    /// Xavier-uniform full table projected to `tiny_dim`.
    pub fn random<R: Rng + ?Sized>(vocab_size: usize, dim: usize, tiny_dim: usize, rng: &mut R) -> Result<Self> {
        Self::from_full(xavier_uniform(vocab_size, dim, rng), tiny_dim)
    }

    /// Imports pretrained rows by token; tokens without a vector keep their
    /// Xavier-uniform initialization.
    pub fn with_pretrained<R: Rng + ?Sized>(
        vocab: &Vocab,
        dim: usize,
        tiny_dim: usize,
        vectors: &HashMap<String, Vec<f32>>,
        rng: &mut R,
    ) -> Result<(Self, usize)> {
        let mut full = xavier_uniform(vocab.len(), dim, rng);
        let mut hits = 0;
        for (i, w) in vocab.words().iter().enumerate() {
            if let Some(v) = vectors.get(w) {
                if v.len() == dim {
                    let row = i + 2;
                    full.data_mut()[row * dim..(row + 1) * dim].copy_from_slice(v);
                    hits += 1;
                }
            }
        }
        Ok((Self::from_full(full, tiny_dim)?, hits))
    }
}

fn zero_row(t: &mut Tensor<f32>, row: usize) {
    let c = t.shape()[1];
    t.data_mut()[row * c..(row + 1) * c].iter_mut().for_each(|v| *v = 0.0);
}

fn total_variance(t: &Tensor<f32>, dim: usize) -> f64 {
    let rows = t.numel() / dim;
    let mut total = 0.0;
    for j in 0..dim {
        let col: Vec<f64> = (0..rows).map(|i| t.data()[i * dim + j] as f64).collect();
        let m = col.iter().sum::<f64>() / rows as f64;
        total += col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (rows - 1) as f64;
    }
    total
}
