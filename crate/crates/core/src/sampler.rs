//! Attentive token sampling.
//!
//! Sketch attention weights `α` become sampling ceilings `p` (by default
//! `p = (1 / ln α)²`), a score `s ~ U(0, p)` is drawn for every token pair,
//! and each query row keeps the `K` keys with the highest scores. Every head
//! draws its own scores, so heads attend to different key sets.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::sketch::AttentionMatrix;

/// Lower clamp for `α` before the logarithm.
pub const ALPHA_MIN: f64 = 1e-12;
/// Upper clamp for `α`; keeps `ln α` away from zero.
pub const ALPHA_MAX: f64 = 1.0 - 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingStrategy {
    /// Uniformly random key sets.
    Random,
    /// The `K` largest sketch weights, no sampling.
    TopK,
    /// Scores drawn from `U(0, α)`.
    RawWeight,
    /// Scores drawn from `U(0, −1/ln α)`.
    InvLog,
    /// Scores drawn from `U(0, (1/ln α)²)`.
    #[default]
    SquaredInvLog,
}

impl SamplingStrategy {
    pub const ALL: [SamplingStrategy; 5] = [
        SamplingStrategy::Random,
        SamplingStrategy::TopK,
        SamplingStrategy::RawWeight,
        SamplingStrategy::InvLog,
        SamplingStrategy::SquaredInvLog,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SamplingStrategy::Random => "random",
            SamplingStrategy::TopK => "top_k",
            SamplingStrategy::RawWeight => "raw_weight",
            SamplingStrategy::InvLog => "inv_log",
            SamplingStrategy::SquaredInvLog => "squared_inv_log",
        }
    }

    /// Whether selection involves random draws.
    pub fn is_stochastic(self) -> bool {
        !matches!(self, SamplingStrategy::TopK)
    }
}

impl fmt::Display for SamplingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SamplingStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SamplingStrategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown sampling strategy {s:?}"))
    }
}

/// Sampling ceiling for one attention weight.
pub fn sampling_probability(alpha: f64, strategy: SamplingStrategy) -> f64 {
    let a = alpha.clamp(ALPHA_MIN, ALPHA_MAX);
    match strategy {
        SamplingStrategy::Random => 1.0,
        SamplingStrategy::TopK | SamplingStrategy::RawWeight => a,
        SamplingStrategy::InvLog => -1.0 / a.ln(),
        SamplingStrategy::SquaredInvLog => {
            let l = a.ln();
            1.0 / (l * l)
        }
    }
}

/// `N×N` matrix of nonnegative per-pair values (ceilings `p` or draws `s`).
/// Entries outside the `valid_len × valid_len` block are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix {
    n: usize,
    valid_len: usize,
    values: Vec<f64>,
}

impl ScoreMatrix {
    pub fn new(n: usize, valid_len: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), n * n, "score matrix must be N×N");
        assert!(valid_len <= n);
        ScoreMatrix { n, valid_len, values }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn valid_len(&self) -> usize {
        self.valid_len
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }
}

/// Ceilings `p` for every valid token pair of `alpha`.
pub fn sampling_scores(alpha: &AttentionMatrix, strategy: SamplingStrategy) -> ScoreMatrix {
    let n = alpha.n();
    let v = alpha.valid_len();
    let mut p = vec![0.0; n * n];
    for i in 0..v {
        for j in 0..v {
            p[i * n + j] = sampling_probability(alpha.get(i, j) as f64, strategy);
        }
    }
    ScoreMatrix::new(n, v, p)
}

/// Draws `s = p · u` with `u ~ U[0, 1)` for every valid pair.
pub fn draw_scores<R: Rng + ?Sized>(p: &ScoreMatrix, rng: &mut R) -> ScoreMatrix {
    let n = p.n;
    let v = p.valid_len;
    let mut s = vec![0.0; n * n];
    for i in 0..v {
        for j in 0..v {
            let u: f64 = rng.gen();
            s[i * n + j] = p.values[i * n + j] * u;
        }
    }
    ScoreMatrix::new(n, v, s)
}

/// Per-query key positions for one head: the nonzero columns of a binary
/// sparse attention index matrix, stored densely.
///
/// Each query row has `width = min(K, valid_len)` distinct keys below
/// `valid_len`. Rows at or past `valid_len` are padding queries; they hold
/// zeros and are inert.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexMatrix {
    n: usize,
    width: usize,
    valid_len: usize,
    idx: Vec<u32>,
}

impl IndexMatrix {
    pub fn new(n: usize, width: usize, valid_len: usize, idx: Vec<u32>) -> Self {
        assert_eq!(idx.len(), n * width);
        IndexMatrix {
            n,
            width,
            valid_len,
            idx,
        }
    }

    /// Every query attends to every valid key, in position order.
    pub fn full(n: usize, valid_len: usize) -> Self {
        let mut idx = Vec::with_capacity(n * valid_len);
        for i in 0..n {
            if i < valid_len {
                idx.extend(0..valid_len as u32);
            } else {
                idx.extend(std::iter::repeat(0).take(valid_len));
            }
        }
        IndexMatrix::new(n, valid_len, valid_len, idx)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn valid_len(&self) -> usize {
        self.valid_len
    }

    pub fn is_inert(&self, query: usize) -> bool {
        query >= self.valid_len
    }

    pub fn row(&self, query: usize) -> &[u32] {
        &self.idx[query * self.width..(query + 1) * self.width]
    }

    pub fn flat(&self) -> &[u32] {
        &self.idx
    }

    /// Dense `N×N` 0/1 matrix with a 1 for every selected valid pair.
    pub fn to_binary(&self) -> Vec<u8> {
        let mut b = vec![0u8; self.n * self.n];
        for i in 0..self.valid_len {
            for &j in self.row(i) {
                b[i * self.n + j as usize] = 1;
            }
        }
        b
    }

    /// Checks the row invariants; returns a description of the first
    /// violation.
    pub fn validate(&self) -> Result<(), String> {
        if self.width > self.valid_len.max(1) || (self.valid_len > 0 && self.width == 0) {
            return Err(format!("width {} with valid_len {}", self.width, self.valid_len));
        }
        for i in 0..self.valid_len {
            let row = self.row(i);
            let mut seen = vec![false; self.valid_len];
            for &j in row {
                let j = j as usize;
                if j >= self.valid_len {
                    return Err(format!("row {i}: index {j} >= valid_len {}", self.valid_len));
                }
                if std::mem::replace(&mut seen[j], true) {
                    return Err(format!("row {i}: duplicate index {j}"));
                }
            }
        }
        Ok(())
    }
}

/// Keeps the `min(k, valid_len)` highest scores per valid row, ties to the
/// smaller index.
pub fn topk_rows(s: &ScoreMatrix, k: usize) -> IndexMatrix {
    select_rows(s, k, false)
}

/// Like [`topk_rows`], optionally reserving the first slot of each row for
/// the query's own position.
pub fn select_rows(s: &ScoreMatrix, k: usize, include_self: bool) -> IndexMatrix {
    assert!(k >= 1, "K must be at least 1");
    let n = s.n;
    let v = s.valid_len;
    let width = k.min(v);
    let mut idx = vec![0u32; n * width];
    let mut cand: Vec<u32> = Vec::with_capacity(v);
    for i in 0..v {
        let row = s.row(i);
        let cmp = |a: &u32, b: &u32| {
            row[*b as usize]
                .total_cmp(&row[*a as usize])
                .then(a.cmp(b))
        };
        cand.clear();
        let out = &mut idx[i * width..(i + 1) * width];
        let mut take = width;
        let mut start = 0;
        if include_self {
            out[0] = i as u32;
            start = 1;
            take -= 1;
            cand.extend((0..v as u32).filter(|&j| j as usize != i));
        } else {
            cand.extend(0..v as u32);
        }
        if take == 0 {
            continue;
        }
        if take < cand.len() {
            cand.select_nth_unstable_by(take - 1, cmp);
            cand.truncate(take);
        }
        cand.sort_by(cmp);
        out[start..].copy_from_slice(&cand);
    }
    IndexMatrix::new(n, width, v, idx)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub strategy: SamplingStrategy,
    pub k: usize,
    pub heads: usize,
    pub include_self: bool,
}

/// Index matrices for `heads` heads from one sketch attention matrix. Each
/// head draws from its own sub-stream seeded from `rng`.
pub fn build_head_indices<R: RngCore + ?Sized>(
    alpha: &AttentionMatrix,
    cfg: &SamplingConfig,
    rng: &mut R,
) -> Vec<IndexMatrix> {
    assert!(cfg.heads >= 1, "at least one head");
    let p = sampling_scores(alpha, cfg.strategy);
    if !cfg.strategy.is_stochastic() {
        let one = select_rows(&p, cfg.k, cfg.include_self);
        return vec![one; cfg.heads];
    }
    (0..cfg.heads)
        .map(|_| {
            let mut head_rng = ChaCha8Rng::seed_from_u64(rng.next_u64());
            let s = draw_scores(&p, &mut head_rng);
            select_rows(&s, cfg.k, cfg.include_self)
        })
        .collect()
}

/// Index matrices for every layer: `result[layer][head]`.
pub fn build_layer_indices(
    attentions: &[AttentionMatrix],
    cfg: &SamplingConfig,
    seed: u64,
) -> Vec<Vec<IndexMatrix>> {
    attentions
        .iter()
        .enumerate()
        .map(|(l, a)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, l as u64]));
            build_head_indices(a, cfg, &mut rng)
        })
        .collect()
}

/// Mixes a tuple of integers into one seed (splitmix64 chaining).
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        h ^= p.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6).wrapping_add(h >> 2);
        h = splitmix(h);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scores(n: usize, valid: usize, rows: &[&[f64]]) -> ScoreMatrix {
        let mut v = vec![0.0; n * n];
        for (i, r) in rows.iter().enumerate() {
            v[i * n..i * n + r.len()].copy_from_slice(r);
        }
        ScoreMatrix::new(n, valid, v)
    }

    #[test]
    fn squared_inv_log_hand_values() {
        let e = std::f64::consts::E;
        let p1 = sampling_probability(1.0 / e, SamplingStrategy::SquaredInvLog);
        assert!((p1 - 1.0).abs() < 1e-12);
        let p2 = sampling_probability(1.0 / (e * e), SamplingStrategy::SquaredInvLog);
        assert!((p2 - 0.25).abs() < 1e-12);
        let q2 = sampling_probability(1.0 / (e * e), SamplingStrategy::InvLog);
        assert!((q2 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn clamping_keeps_extremes_finite() {
        let p = sampling_probability(1.0, SamplingStrategy::SquaredInvLog);
        // ln(1 - 1e-6) = -1.0000005000003333e-6, evaluated by series.
        let l = -(1e-6 + 0.5e-12 + 1e-18 / 3.0);
        let want = 1.0 / (l * l);
        assert!(p.is_finite());
        assert!((p - want).abs() / want < 1e-9, "{p} vs {want}");
        assert!(sampling_probability(0.0, SamplingStrategy::SquaredInvLog).is_finite());
        assert!(sampling_probability(0.0, SamplingStrategy::InvLog) > 0.0);
    }

    #[test]
    fn pad_columns_get_zero_ceiling() {
        let a = AttentionMatrix::uniform(4, 2);
        let p = sampling_scores(&a, SamplingStrategy::Random);
        assert_eq!(p.row(0), &[1.0, 1.0, 0.0, 0.0]);
        assert!(p.row(3).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zero_ceiling_draws_zero() {
        let p = ScoreMatrix::new(2, 2, vec![0.0, 1.0, 0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = draw_scores(&p, &mut rng);
        assert_eq!(s.get(0, 0), 0.0);
        assert!(s.get(0, 1) >= 0.0 && s.get(0, 1) < 1.0);
        let mut rng2 = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(draw_scores(&p, &mut rng2), s);
    }

    #[test]
    fn topk_hand_cases() {
        let s = scores(4, 4, &[&[0.9, 0.1, 0.5, 0.7]]);
        let m = topk_rows(&s, 2);
        let mut r = m.row(0).to_vec();
        r.sort();
        assert_eq!(r, vec![0, 3]);

        let all = topk_rows(&s, 10);
        assert_eq!(all.width(), 4);
        let mut r = all.row(0).to_vec();
        r.sort();
        assert_eq!(r, vec![0, 1, 2, 3]);

        let tie = scores(3, 3, &[&[0.5, 0.5, 0.2]]);
        assert_eq!(topk_rows(&tie, 1).row(0), &[0]);
    }

    #[test]
    fn padding_queries_are_inert() {
        let s = scores(4, 2, &[&[0.1, 0.9], &[0.3, 0.2]]);
        let m = topk_rows(&s, 3);
        assert_eq!(m.width(), 2);
        assert!(m.is_inert(2) && m.is_inert(3));
        assert_eq!(m.row(3), &[0, 0]);
        m.validate().unwrap();
        let b = m.to_binary();
        assert_eq!(b.iter().filter(|&&x| x == 1).count(), 4);
    }

    #[test]
    fn include_self_puts_diagonal_first() {
        let s = scores(3, 3, &[&[0.0, 0.9, 0.8], &[0.7, 0.1, 0.9], &[0.5, 0.6, 0.0]]);
        let m = select_rows(&s, 2, true);
        assert_eq!(m.row(0), &[0, 1]);
        assert_eq!(m.row(1), &[1, 2]);
        assert_eq!(m.row(2), &[2, 1]);
        m.validate().unwrap();
    }

    #[test]
    fn single_head_equals_manual_pipeline() {
        let a = AttentionMatrix::uniform(6, 6);
        let cfg = SamplingConfig {
            strategy: SamplingStrategy::SquaredInvLog,
            k: 2,
            heads: 1,
            include_self: false,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let got = build_head_indices(&a, &cfg, &mut rng);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut head = ChaCha8Rng::seed_from_u64(rng.next_u64());
        let want = topk_rows(&draw_scores(&sampling_scores(&a, cfg.strategy), &mut head), 2);
        assert_eq!(got, vec![want]);
    }

    #[test]
    fn topk_strategy_heads_identical() {
        let a = AttentionMatrix::uniform(8, 8);
        let cfg = SamplingConfig {
            strategy: SamplingStrategy::TopK,
            k: 3,
            heads: 8,
            include_self: false,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let h = build_head_indices(&a, &cfg, &mut rng);
        assert!(h.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn strategy_names_roundtrip() {
        for s in SamplingStrategy::ALL {
            assert_eq!(s.name().parse::<SamplingStrategy>().unwrap(), s);
        }
        assert!("bogus".parse::<SamplingStrategy>().is_err());
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(&[1, 2, 3]), derive_seed(&[1, 3, 2]));
        assert_eq!(derive_seed(&[5, 0]), derive_seed(&[5, 0]));
    }
}
