//! Accuracy and operation counts as the number of sampled keys per query
//! grows.
//!
//! ```text
//! cargo run --release --example k_sweep
//! ```

use smartbird::analysis::k_sweep;
use smartbird::textpipe::{synth_task, SynthConfig};
use smartbird::trainer::ModelConfig;

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
        layers: 1,
        max_len: 32,
        lr: 3e-3,
        sketch_lr: Some(1e-2),
        batch_size: 32,
        epochs: 6,
        sketch_epochs: Some(40),
        dropout: 0.0,
        ..Default::default()
    };
    let rows = k_sweep(&train, &test, &cfg, &[1, 2, 4, 8, 32], &[0]).unwrap();
    println!("{:>3} {:>9} {:>12} {:>12}", "K", "accuracy", "smart flops", "dense flops");
    for r in &rows {
        println!("{:>3} {:>9.3} {:>12} {:>12}", r.k, r.mean_accuracy, r.smart_flops, r.dense_flops);
    }
}
