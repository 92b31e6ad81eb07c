//! Property tests for the structural invariants of every module.

mod common;

use common::{random_example, random_indices, sparse_dense_gap, tiny_encoder};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use smartbird::analysis::{attention_crossover, flops_model, pearson, Architecture, FlopParams};
use smartbird::report::{csv_body, from_csv_str, to_csv_string};
use smartbird::sampler::{
    build_head_indices, sampling_probability, IndexMatrix, SamplingConfig, SamplingStrategy,
};
use smartbird::sketch::{AttentionMatrix, SketchConfig, SketchModel};
use smartbird::sparse::{AttentionMode, EncoderModel};
use smartbird::tensor::{adam_update, AdamConfig, AdamMoments, Tape, Tensor};
use smartbird::textpipe::{decode, encode, Vocab};

fn strategy() -> impl Strategy<Value = SamplingStrategy> {
    prop::sample::select(SamplingStrategy::ALL.to_vec())
}

/// Random row-stochastic matrix with zero PAD rows and columns.
fn random_attention(n: usize, valid: usize, seed: u64) -> AttentionMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = vec![0.0f32; n * n];
    for i in 0..valid {
        let row: Vec<f64> = (0..valid).map(|_| rng.gen_range(-4.0f64..4.0).exp()).collect();
        let z: f64 = row.iter().sum();
        for j in 0..valid {
            w[i * n + j] = (row[j] / z) as f32;
        }
    }
    AttentionMatrix::new(n, valid, w)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_distributions(rows in 1usize..6, cols in 1usize..9, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::from_fn([rows, cols], |_| rng.gen_range(-30.0f64..30.0));
        let mut tape = Tape::no_grad();
        let v = tape.leaf(x);
        let s = tape.softmax_rows(v);
        for r in tape.value(s).data().chunks(cols) {
            prop_assert!(r.iter().all(|&p| (0.0..=1.0).contains(&p)));
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn index_matrices_are_valid(
        n in 1usize..24,
        valid_frac in 0.0f64..1.0,
        k in 1usize..30,
        heads in 1usize..4,
        s in strategy(),
        include_self: bool,
        seed: u64,
    ) {
        let valid = 1 + ((n - 1) as f64 * valid_frac) as usize;
        let a = random_attention(n, valid, seed);
        let cfg = SamplingConfig { strategy: s, k, heads, include_self };
        let ms = build_head_indices(&a, &cfg, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(ms.len(), heads);
        for m in &ms {
            prop_assert!(m.validate().is_ok(), "{:?}", m.validate());
            prop_assert_eq!(m.width(), k.min(valid));
            for q in 0..n {
                let row = m.row(q);
                if q >= valid {
                    prop_assert!(m.is_inert(q));
                    continue;
                }
                let mut sorted = row.to_vec();
                sorted.sort_unstable();
                sorted.dedup();
                prop_assert_eq!(sorted.len(), row.len());
                prop_assert!(row.iter().all(|&j| (j as usize) < valid));
                if include_self {
                    prop_assert_eq!(row[0] as usize, q);
                }
            }
        }
    }

    #[test]
    fn top_k_keeps_the_largest_weights(n in 2usize..20, k in 1usize..20, seed: u64) {
        let a = random_attention(n, n, seed);
        let cfg = SamplingConfig { strategy: SamplingStrategy::TopK, k, heads: 1, include_self: false };
        let m = &build_head_indices(&a, &cfg, &mut ChaCha8Rng::seed_from_u64(0))[0];
        for q in 0..n {
            let kept_min = m.row(q).iter().map(|&j| a.get(q, j as usize)).fold(f32::INFINITY, f32::min);
            let dropped_max = (0..n as u32)
                .filter(|j| !m.row(q).contains(j))
                .map(|j| a.get(q, j as usize))
                .fold(f32::NEG_INFINITY, f32::max);
            prop_assert!(kept_min >= dropped_max);
        }
    }

    #[test]
    fn ceilings_grow_with_weight(a in 1e-9f64..0.999, b in 1e-9f64..0.999) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        for s in [SamplingStrategy::RawWeight, SamplingStrategy::InvLog, SamplingStrategy::SquaredInvLog] {
            prop_assert!(sampling_probability(lo, s) <= sampling_probability(hi, s));
            prop_assert!(sampling_probability(lo, s) > 0.0);
        }
    }

    #[test]
    fn pearson_is_symmetric_and_affine_invariant(
        xs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..40),
        scale in 0.1f64..10.0,
        shift in -50.0f64..50.0,
    ) {
        let a: Vec<f64> = xs.iter().map(|p| p.0).collect();
        let b: Vec<f64> = xs.iter().map(|p| p.1).collect();
        if let (Ok(ab), Ok(ba)) = (pearson(&a, &b), pearson(&b, &a)) {
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&ab));
            let a2: Vec<f64> = a.iter().map(|x| x * scale + shift).collect();
            prop_assert!((pearson(&a2, &b).unwrap() - ab).abs() < 1e-9);
            prop_assert!((pearson(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn flop_inequality_decides_attention_cost(
        n in 1u64..8192,
        tiny_dim in 1u64..64,
        dim in 1u64..512,
        k in 1u64..128,
        layers in 1u64..4,
    ) {
        let p = FlopParams { n, tiny_dim, dim, k, heads: 1, layers };
        let smart = flops_model(&p, Architecture::Smart);
        let dense = flops_model(&p, Architecture::Dense);
        // N(D − d) > KD, evaluated in signed integers.
        let holds = n as i128 * (dim as i128 - tiny_dim as i128) > (k * dim) as i128;
        prop_assert_eq!(smart.attention_total < dense.attention_total, holds);
        if let Some(c) = attention_crossover(&p) {
            prop_assert_eq!(n as f64 > c, holds || (n as f64 - c).abs() < 1e-9);
        }
    }

    #[test]
    fn sketch_attention_is_row_stochastic(n in 1usize..16, valid_frac in 0.0f64..1.0, layers in 1usize..3, seed: u64) {
        let valid = 1 + ((n - 1) as f64 * valid_frac) as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = SketchConfig { vocab_size: 12, dim: 4, layers, n_classes: 3, max_len: n, positions: true };
        let m = SketchModel::random(cfg, &mut rng).unwrap();
        let ex = random_example(n, valid, 12, &mut rng);
        let att = m.attention(&ex).unwrap();
        prop_assert_eq!(att.len(), layers);
        for a in &att {
            for i in 0..n {
                let sum: f64 = a.row(i).iter().map(|&x| x as f64).sum();
                if i < valid {
                    prop_assert!((sum - 1.0).abs() < 1e-5);
                    prop_assert!(a.row(i)[valid..].iter().all(|&x| x == 0.0));
                } else {
                    prop_assert_eq!(sum, 0.0);
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sparse_with_all_keys_equals_dense(seed: u64) {
        let g = sparse_dense_gap(seed);
        prop_assert!(g.forward < 1e-5, "forward gap {}", g.forward);
        prop_assert!(g.grad < 1e-3, "gradient gap {}", g.grad);
    }

    #[test]
    fn slot_order_does_not_matter(seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, heads) = (rng.gen_range(2..12), 2);
        let model = EncoderModel::random(tiny_encoder(n, 8, heads, 1), &mut rng).unwrap();
        let valid = rng.gen_range(1..=n);
        let k = rng.gen_range(1..=n);
        let ex = random_example(n, valid, 12, &mut rng);
        let idx: Vec<IndexMatrix> = (0..heads).map(|_| random_indices(n, valid, k, &mut rng)).collect();
        let permuted: Vec<IndexMatrix> = idx
            .iter()
            .map(|m| {
                let mut flat = Vec::with_capacity(m.flat().len());
                for q in 0..n {
                    let mut row = m.row(q).to_vec();
                    row.shuffle(&mut rng);
                    flat.extend(row);
                }
                IndexMatrix::new(n, m.width(), valid, flat)
            })
            .collect();
        let logits = |idx: &[IndexMatrix]| {
            let all = vec![idx.to_vec()];
            let mut tape = Tape::no_grad();
            let pass = model.forward(&mut tape, &ex.token_ids, valid, AttentionMode::Sparse(&all), None).unwrap();
            tape.value(pass.head.logits).data().to_vec()
        };
        let (a, b) = (logits(&idx), logits(&permuted));
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-5, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn csv_roundtrip(rows in prop::collection::vec(("[a-z ,\"]{0,12}", any::<i64>(), -1e6f64..1e6, any::<bool>()), 0..20)) {
        #[derive(Debug, PartialEq, Serialize, Deserialize)]
        struct Row { name: String, count: i64, value: f64, flag: bool }
        let rows: Vec<Row> = rows.into_iter().map(|(name, count, value, flag)| Row { name, count, value, flag }).collect();
        let meta = serde_json::json!({"k": 4, "note": "x"});
        let text = to_csv_string(&meta, &rows).unwrap();
        let (m2, back): (_, Vec<Row>) = from_csv_str(&text).unwrap();
        prop_assert_eq!(m2, meta);
        prop_assert_eq!(back, rows);
        prop_assert!(!csv_body(&text).starts_with('#'));
    }

    #[test]
    fn encode_decode_roundtrip(words in prop::collection::vec("[a-e]{1,3}", 1..30), max_len in 1usize..40) {
        let vocab = Vocab::from_tokens(words.iter(), 1);
        let ex = encode(&words, &vocab, max_len, 1).unwrap();
        prop_assert_eq!(ex.token_ids.len(), max_len);
        prop_assert_eq!(ex.attn_len, words.len().min(max_len));
        prop_assert_eq!(decode(&ex, &vocab), words[..ex.attn_len].to_vec());
        prop_assert!(ex.token_ids[ex.attn_len..].iter().all(|&t| t == 0));
    }

    #[test]
    fn adam_minimizes_a_parabola(x0 in -5.0f32..5.0, lr in 0.05f64..0.2) {
        prop_assume!(x0.abs() > 1e-3);
        let cfg = AdamConfig { lr, ..AdamConfig::default() };
        let mut x = [x0];
        let mut state = AdamMoments::new(1);
        adam_update(&mut x, &[2.0 * x0], &mut state, &cfg, 1).unwrap();
        // The bias-corrected first step has length lr.
        prop_assert!(((x0 - x[0]).abs() as f64 - lr).abs() < 1e-5);
        for t in 2..=300 {
            let g = [2.0 * x[0]];
            adam_update(&mut x, &g, &mut state, &cfg, t).unwrap();
        }
        prop_assert!(x[0].abs() < 0.25, "{x0} -> {}", x[0]);
    }
}
