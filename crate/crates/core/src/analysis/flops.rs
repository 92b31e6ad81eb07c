//! Closed-form multiply-accumulate counts for one forward pass.
//!
//! Per layer, with `N` tokens, sketch width `d`, model width `D` and `K`
//! sampled keys per query:
//!
//! | term              | dense    | smart    |
//! |-------------------|----------|----------|
//! | attention         | `2N²D`   | `2NKD`   |
//! | projections       | `4ND²`   | `4ND²`   |
//! | sketch attention  |          | `2N²d`   |
//! | sketch projections|          | `4Nd²`   |
//! | sampling compares |          | `N²`     |
//!
//! The attention factor 2 counts `QKᵀ` and `A·V`; the projection factor 4
//! counts queries, keys, values and the output map (the sketch has no output
//! map but keeps the same constant for simplicity). The dominant terms are
//! `N²D` for dense and `N²d + NKD` for smart.

use serde::{Deserialize, Serialize};

use crate::trainer::ModelConfig;

/// Constants used by [`flops_model`], echoed into report metadata.
pub const FLOP_CONSTANTS: &str =
    "attention=2*N^2*D (dense) | 2*N*K*D (sparse) | 2*N^2*d (sketch); projections=4*N*D^2, 4*N*d^2; sampling=N^2";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopParams {
    pub n: u64,
    pub tiny_dim: u64,
    pub dim: u64,
    pub k: u64,
    pub heads: u64,
    pub layers: u64,
}

impl FlopParams {
    pub fn from_config(cfg: &ModelConfig, n: usize) -> Self {
        FlopParams {
            n: n as u64,
            tiny_dim: cfg.tiny_dim as u64,
            dim: cfg.dim as u64,
            k: cfg.k as u64,
            heads: cfg.heads as u64,
            layers: cfg.layers as u64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Smart,
    Dense,
}

/// Per-component counts summed over layers. Components that do not apply to
/// the architecture are zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopReport {
    pub arch: Architecture,
    pub n: u64,
    pub tiny_dim: u64,
    pub dim: u64,
    pub k: u64,
    pub heads: u64,
    pub layers: u64,
    pub sketch_attention: u64,
    pub sketch_projections: u64,
    pub sampling: u64,
    pub sparse_attention: u64,
    pub dense_attention: u64,
    pub projections: u64,
    /// `L·N²d` (smart only).
    pub dominant_sketch: u64,
    /// `L·NKD` (smart only).
    pub dominant_sparse: u64,
    /// `L·N²D` (dense only).
    pub dominant_dense: u64,
    /// Sum of the three dominant terms.
    pub dominant: u64,
    /// Attention terms only, full constants.
    pub attention_total: u64,
    /// Every component.
    pub total: u64,
}

pub fn flops_model(p: &FlopParams, arch: Architecture) -> FlopReport {
    let FlopParams {
        n,
        tiny_dim: d,
        dim,
        k,
        heads,
        layers: l,
    } = *p;
    let projections = l * 4 * n * dim * dim;
    let (dominant_sketch, dominant_sparse, dominant_dense) = match arch {
        Architecture::Smart => (l * n * n * d, l * n * k * dim, 0),
        Architecture::Dense => (0, 0, l * n * n * dim),
    };
    let (sketch_projections, sampling) = match arch {
        Architecture::Smart => (l * 4 * n * d * d, l * n * n),
        Architecture::Dense => (0, 0),
    };
    let sketch_attention = 2 * dominant_sketch;
    let sparse_attention = 2 * dominant_sparse;
    let dense_attention = 2 * dominant_dense;
    let attention_total = sketch_attention + sparse_attention + dense_attention;
    FlopReport {
        arch,
        n,
        tiny_dim: d,
        dim,
        k,
        heads,
        layers: l,
        sketch_attention,
        sketch_projections,
        sampling,
        sparse_attention,
        dense_attention,
        projections,
        dominant_sketch,
        dominant_sparse,
        dominant_dense,
        dominant: dominant_sketch + dominant_sparse + dominant_dense,
        attention_total,
        total: attention_total + sketch_projections + sampling + projections,
    }
}

/// Sequence length beyond which smart attention terms undercut dense ones:
/// `N > K·D / (D − d)`. `None` when `d >= D`.
pub fn attention_crossover(p: &FlopParams) -> Option<f64> {
    (p.dim > p.tiny_dim).then(|| (p.k * p.dim) as f64 / (p.dim - p.tiny_dim) as f64)
}
