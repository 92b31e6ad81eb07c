//! Pearson correlation between a trained sketch's attention and a trained
//! dense model's head-averaged attention, against a row-shuffled control and
//! a second dense model.
//!
//! ```text
//! cargo run --example correlation_study
//! ```

use smartbird::analysis::correlation_study;
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
    let (test, _) = synth_task(&SynthConfig { seed: 1, n_examples: 200, ..task }).unwrap();
    let cfg = ModelConfig {
        dim: 32,
        heads: 4,
        k: 4,
        layers: 1,
        max_len: 32,
        lr: 3e-3,
        sketch_lr: Some(1e-2),
        batch_size: 32,
        epochs: 6,
        sketch_epochs: Some(10),
        dropout: 0.0,
        ..Default::default()
    };
    let r = correlation_study(&train, &test, &cfg, &[0, 1], 100).unwrap();
    println!(
        "sketch accuracy {:.3}, dense accuracy {:.3}",
        r.sketch_accuracy, r.dense_accuracy
    );
    println!("{:<20} {:>5} {:>8} {:>8} {:>10}", "comparison", "n", "mean r", "std r", "shuffled");
    for row in r.rows() {
        let name = match row.layer {
            Some(l) => format!("{} L{l}", row.comparison),
            None => row.comparison.clone(),
        };
        println!(
            "{name:<20} {:>5} {:>8.3} {:>8.3} {:>10.3}",
            row.n, row.mean_r, row.std_r, row.shuffled_mean_r
        );
    }
}
