//! Finite-difference checks of every differentiable op and of full models.

mod common;

use common::{check_store, op_checks, random_example, sparse_model_check};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use smartbird::sketch::{SketchConfig, SketchModel};
use smartbird::sparse::AttentionMode;

#[test]
fn every_op_matches_finite_differences() {
    for seed in 0..20 {
        for (name, c) in op_checks(seed) {
            assert!(!c.analytic.is_empty(), "{name} seed {seed}: every coordinate skipped");
            assert!(c.error() < 1e-4, "{name} seed {seed}: rel error {:.3e}", c.error());
        }
    }
}

#[test]
fn sparse_model_matches_finite_differences() {
    for seed in 0..5 {
        let c = sparse_model_check(seed, 8, 8, 2, 3);
        assert!(c.error() < 1e-3, "seed {seed}: rel error {:.3e}", c.error());
        assert!(c.skipped * 10 < c.analytic.len(), "too many kinks: {}", c.skipped);
    }
}

#[test]
fn dense_model_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let model = smartbird::sparse::EncoderModel::random(common::tiny_encoder(6, 8, 2, 2), &mut rng).unwrap();
    let m64: smartbird::sparse::EncoderModel<f64> = model.cast();
    let ex = random_example(6, 5, 12, &mut rng);
    let mut store = m64.store.clone();
    let c = check_store(&mut store, |t, st| {
        let m = smartbird::sparse::EncoderModel {
            store: st.clone(),
            ..m64.clone()
        };
        m.loss(t, &ex, AttentionMode::Dense, None).unwrap().0
    });
    assert!(c.error() < 1e-3, "rel error {:.3e}", c.error());
}

#[test]
fn sketch_model_matches_finite_differences() {
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = SketchConfig {
            vocab_size: 12,
            dim: 4,
            layers: 2,
            n_classes: 3,
            max_len: 7,
            positions: true,
        };
        let m64: SketchModel<f64> = SketchModel::random(cfg, &mut rng).unwrap().cast();
        let ex = random_example(7, 6, 12, &mut rng);
        let mut store = m64.store.clone();
        let c = check_store(&mut store, |t, st| {
            let m = SketchModel {
                store: st.clone(),
                ..m64.clone()
            };
            m.loss(t, &ex).unwrap().0
        });
        assert!(c.error() < 1e-4, "seed {seed}: rel error {:.3e}", c.error());
    }
}
