//! Statistical behavior of attentive sampling.

mod common;

use common::{check_monotone, exchangeability_max_z, inclusion_curve, uniform_ratio_mean};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use smartbird::sampler::{build_head_indices, sampling_probability, SamplingConfig, SamplingStrategy};
use smartbird::sketch::AttentionMatrix;

#[test]
fn uniform_draws_average_half_the_ceiling() {
    let m = uniform_ratio_mean(1_000_000, 0);
    assert!((m - 0.5).abs() < 0.002, "mean s/p = {m}");
}

#[test]
fn constant_rows_select_every_key_equally() {
    let z = exchangeability_max_z(20, 5, 10_000, 1);
    assert!(z < 3.0, "max |z| = {z:.2}");
}

#[test]
fn inclusion_grows_with_weight() {
    let curve = inclusion_curve(16, 4, 10_000, 2);
    check_monotone(&curve, 10_000).unwrap();
}

#[test]
fn clamped_extremes_stay_finite() {
    let top = sampling_probability(1.0, SamplingStrategy::SquaredInvLog);
    // (1 / ln(1 − 1e-6))² ≈ 1e12.
    assert!((top / 1e12 - 1.0).abs() < 1e-5, "{top}");
    let bottom = sampling_probability(0.0, SamplingStrategy::SquaredInvLog);
    let want = 1.0 / (1e-12f64.ln().powi(2));
    assert!((bottom - want).abs() < 1e-15 && bottom > 0.0);
    for s in SamplingStrategy::ALL {
        for a in [0.0, 1e-30, 0.5, 1.0, 2.0] {
            assert!(sampling_probability(a, s).is_finite(), "{s} at {a}");
        }
    }
}

#[test]
fn heads_draw_different_key_sets() {
    let n = 32;
    let a = AttentionMatrix::uniform(n, n);
    let cfg = SamplingConfig {
        strategy: SamplingStrategy::SquaredInvLog,
        k: 4,
        heads: 4,
        include_self: false,
    };
    let heads = build_head_indices(&a, &cfg, &mut ChaCha8Rng::seed_from_u64(3));
    let mut same = 0;
    for q in 0..n {
        if heads[0].row(q) == heads[1].row(q) {
            same += 1;
        }
    }
    assert!(same < n / 4, "heads agree on {same} of {n} rows");
    // Deterministic strategies give every head the same keys.
    let top = build_head_indices(&a, &SamplingConfig { strategy: SamplingStrategy::TopK, ..cfg }, &mut ChaCha8Rng::seed_from_u64(3));
    assert!(top.windows(2).all(|w| w[0] == w[1]));
}
