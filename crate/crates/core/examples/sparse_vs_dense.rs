//! Runs one encoder in dense mode and in sparse mode. With every key kept the
//! two agree; with fewer keys the output drifts away from the dense one.
//!
//! ```text
//! cargo run --example sparse_vs_dense
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use smartbird::sampler::{build_layer_indices, IndexMatrix, SamplingConfig, SamplingStrategy};
use smartbird::sketch::AttentionMatrix;
use smartbird::sparse::{AttentionMode, EncoderConfig, EncoderModel};
use smartbird::tensor::Tape;
use smartbird::textpipe::{synth_task, SynthConfig};

fn main() {
    let (n, heads) = (32, 4);
    let cfg = EncoderConfig {
        vocab_size: 32,
        dim: 32,
        heads,
        layers: 2,
        n_classes: 4,
        max_len: n,
        positions: true,
        dropout: 0.0,
    };
    let model = EncoderModel::random(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let (data, _) = synth_task(&SynthConfig {
        n_examples: 1,
        seq_len: n,
        vocab_size: 32,
        pair_gap: 4,
        ..Default::default()
    })
    .unwrap();
    let ex = &data.examples[0];

    let hidden = |mode: AttentionMode<'_>| {
        let mut tape = Tape::no_grad();
        let pass = model.forward(&mut tape, &ex.token_ids, ex.attn_len, mode, None).unwrap();
        tape.value(pass.hidden).data().to_vec()
    };
    let dense = hidden(AttentionMode::Dense);
    let gap = |other: &[f32]| dense.iter().zip(other).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);

    let full: Vec<Vec<IndexMatrix>> = vec![vec![IndexMatrix::full(n, ex.attn_len); heads]; 2];
    println!("K = N (all keys):  max |sparse − dense| = {:.2e}", gap(&hidden(AttentionMode::Sparse(&full))));

    let uniform = vec![AttentionMatrix::uniform(n, ex.attn_len); 2];
    for k in [16, 8, 4, 1] {
        let sampling = SamplingConfig {
            strategy: SamplingStrategy::Random,
            k,
            heads,
            include_self: false,
        };
        let idx = build_layer_indices(&uniform, &sampling, 0);
        println!("K = {k:<2} random keys: max |sparse − dense| = {:.3}", gap(&hidden(AttentionMode::Sparse(&idx))));
    }
}
