//! Two-phase training on the synthetic task: the sketch first, then the
//! sparse model on keys sampled from it. A dense baseline of the same width
//! and depth is trained for comparison.
//!
//! ```text
//! cargo run --example train_synthetic
//! ```

use smartbird::textpipe::{synth_task, SynthConfig};
use smartbird::trainer::{embedding_table, run_training, ModelConfig, ModelKind};

fn main() {
    let task = SynthConfig {
        n_examples: 2000,
        seq_len: 32,
        vocab_size: 32,
        pair_gap: 4,
        ..Default::default()
    };
    let (train, _) = synth_task(&task).unwrap();
    let (test, _) = synth_task(&SynthConfig { seed: 1, n_examples: 500, ..task }).unwrap();
    let cfg = ModelConfig {
        dim: 32,
        heads: 4,
        k: 4,
        layers: 2,
        max_len: 32,
        lr: 3e-3,
        sketch_lr: Some(1e-2),
        batch_size: 32,
        epochs: 6,
        sketch_epochs: Some(20),
        dropout: 0.0,
        ..Default::default()
    };
    let table = embedding_table(train.vocab.len(), &cfg).unwrap();
    for kind in [ModelKind::Smart, ModelKind::Dense] {
        let (_, metrics) = run_training(&train, Some(&test), &table, &cfg, kind).unwrap();
        println!("{kind:?}:");
        for r in &metrics.rows {
            let loss = r.loss.map_or("      ".to_string(), |l| format!("{l:.4}"));
            println!("  {:<6} epoch {:>2} loss {loss} accuracy {:.3} macro-F {:.3}", r.phase, r.epoch, r.accuracy, r.macro_f);
        }
        for (phase, ms) in &metrics.ms_per_iter {
            println!("  {phase}: {ms:.2} ms per step");
        }
    }
}
