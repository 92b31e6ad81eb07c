//! Attention-matrix statistics: Pearson correlation, shuffled controls and
//! log-spaced histograms of weights and sampling ceilings.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AnalysisError, Result};
use crate::sampler::{sampling_probability, SamplingStrategy};
use crate::sketch::AttentionMatrix;

/// Pearson correlation of two equal-length samples. Errors when either has
/// zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(AnalysisError::Undefined(format!(
            "need two equal-length samples of at least 2 values, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(AnalysisError::Undefined("zero variance".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson correlation over the valid blocks of two attention matrices.
pub fn pearson_attention(a: &AttentionMatrix, b: &AttentionMatrix) -> Result<f64> {
    if a.valid_len() != b.valid_len() {
        return Err(AnalysisError::Undefined(format!(
            "valid lengths differ: {} vs {}",
            a.valid_len(),
            b.valid_len()
        )));
    }
    if a.valid_len() < 2 {
        return Err(AnalysisError::Undefined("valid_len below 2".into()));
    }
    pearson(&a.valid_block(), &b.valid_block())
}

/// Copy of `a` with the valid entries of every valid row permuted
/// independently. Row sums are preserved.
pub fn row_shuffled<R: Rng + ?Sized>(a: &AttentionMatrix, rng: &mut R) -> AttentionMatrix {
    let n = a.n();
    let v = a.valid_len();
    let mut w = a.weights().to_vec();
    for i in 0..v {
        w[i * n..i * n + v].shuffle(rng);
    }
    AttentionMatrix::new(n, v, w)
}

/// Mean, standard deviation and count of the defined correlations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    /// Pairs skipped because r was undefined.
    pub undefined: usize,
}

impl Summary {
    pub fn of(values: &[f64], undefined: usize) -> Self {
        let n = values.len();
        if n == 0 {
            return Summary {
                undefined,
                ..Default::default()
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Summary {
            mean,
            std: var.sqrt(),
            n,
            undefined,
        }
    }
}

/// Correlations between paired attention matrices and against a
/// row-shuffled copy of the second member of each pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairCorrelation {
    pub r: Vec<f64>,
    pub shuffled_r: Vec<f64>,
    pub summary: Summary,
    pub shuffled: Summary,
}

pub fn correlate_pairs<R: Rng + ?Sized>(pairs: &[(AttentionMatrix, AttentionMatrix)], rng: &mut R) -> PairCorrelation {
    let mut r = Vec::new();
    let mut shuffled_r = Vec::new();
    let (mut undef, mut undef_s) = (0, 0);
    for (a, b) in pairs {
        match pearson_attention(a, b) {
            Ok(x) => r.push(x),
            Err(_) => undef += 1,
        }
        match pearson_attention(a, &row_shuffled(b, rng)) {
            Ok(x) => shuffled_r.push(x),
            Err(_) => undef_s += 1,
        }
    }
    PairCorrelation {
        summary: Summary::of(&r, undef),
        shuffled: Summary::of(&shuffled_r, undef_s),
        r,
        shuffled_r,
    }
}

/// Histogram with logarithmically spaced bins between the smallest and
/// largest positive value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogHistogram {
    /// `counts.len() + 1` bin edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// Values that were zero or negative and could not be placed.
    pub nonpositive: u64,
}

impl LogHistogram {
    /// A sample whose positive values are all equal yields a single bin.
    pub fn new(values: &[f64], bins: usize) -> Self {
        let bins = bins.max(1);
        let pos: Vec<f64> = values.iter().copied().filter(|v| *v > 0.0).collect();
        let nonpositive = (values.len() - pos.len()) as u64;
        let (lo, hi) = pos
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        if pos.is_empty() {
            return LogHistogram {
                edges: vec![],
                counts: vec![],
                nonpositive,
            };
        }
        if lo == hi {
            return LogHistogram {
                edges: vec![lo, hi],
                counts: vec![pos.len() as u64],
                nonpositive,
            };
        }
        let (llo, lhi) = (lo.ln(), hi.ln());
        let width = (lhi - llo) / bins as f64;
        let mut edges: Vec<f64> = (0..=bins).map(|b| (llo + b as f64 * width).exp()).collect();
        edges[0] = lo;
        edges[bins] = hi;
        let mut counts = vec![0u64; bins];
        for v in pos {
            let b = (((v.ln() - llo) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        LogHistogram {
            edges,
            counts,
            nonpositive,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.nonpositive
    }

    pub fn occupied_bins(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub median: f64,
    pub std: f64,
    /// Coefficient of variation, `std / mean`.
    pub cv: f64,
}

impl Moments {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let median = match sorted.len() {
            0 => 0.0,
            l if l % 2 == 1 => sorted[l / 2],
            l => 0.5 * (sorted[l / 2 - 1] + sorted[l / 2]),
        };
        Moments {
            mean,
            median,
            std,
            cv: if mean != 0.0 { std / mean } else { 0.0 },
        }
    }
}

/// Distribution of one quantity: its histogram and moments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub name: String,
    pub histogram: LogHistogram,
    pub moments: Moments,
}

/// Raw attention weights and the sampling ceilings derived from them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreHistogram {
    pub alpha: Distribution,
    pub inv_log: Distribution,
    pub squared_inv_log: Distribution,
}

/// Collects every valid `α` of the batch (all layers) and the `InvLog` and
/// `SquaredInvLog` ceilings computed from them.
pub fn score_histogram(batch: &[AttentionMatrix], bins: usize) -> Result<ScoreHistogram> {
    let alpha: Vec<f64> = batch.iter().flat_map(|a| a.valid_block()).collect();
    if alpha.is_empty() {
        return Err(AnalysisError::Empty("attention batch"));
    }
    let map = |s: SamplingStrategy| -> Vec<f64> { alpha.iter().map(|&a| sampling_probability(a, s)).collect() };
    let dist = |name: &str, v: &[f64]| Distribution {
        name: name.to_string(),
        histogram: LogHistogram::new(v, bins),
        moments: Moments::of(v),
    };
    let inv = map(SamplingStrategy::InvLog);
    let sq = map(SamplingStrategy::SquaredInvLog);
    Ok(ScoreHistogram {
        alpha: dist("alpha", &alpha),
        inv_log: dist("inv_log", &inv),
        squared_inv_log: dist("squared_inv_log", &sq),
    })
}
