//! Distribution of trained sketch attention weights and of the sampling
//! ceilings derived from them, drawn as log-binned text histograms.
//!
//! ```text
//! cargo run --example score_histogram
//! ```

use smartbird::analysis::{sketch_score_histogram, Distribution};
use smartbird::textpipe::{synth_task, SynthConfig};
use smartbird::trainer::{embedding_table, train_sketch, ModelConfig};

fn show(d: &Distribution) {
    let m = d.moments;
    println!(
        "{}: mean {:.4e}, median {:.4e}, CV {:.2}",
        d.name, m.mean, m.median, m.cv
    );
    let peak = d.histogram.counts.iter().copied().max().unwrap_or(1).max(1);
    for (b, &c) in d.histogram.counts.iter().enumerate() {
        let bar = "#".repeat((40 * c / peak) as usize);
        println!("  [{:>9.2e}, {:>9.2e}) {bar}", d.histogram.edges[b], d.histogram.edges[b + 1]);
    }
}

fn main() {
    let task = SynthConfig {
        n_examples: 2000,
        seq_len: 32,
        vocab_size: 32,
        pair_gap: 4,
        ..Default::default()
    };
    let (train, _) = synth_task(&task).unwrap();
    let (test, _) = synth_task(&SynthConfig { seed: 1, n_examples: 100, ..task }).unwrap();
    let cfg = ModelConfig {
        dim: 32,
        layers: 2,
        max_len: 32,
        lr: 1e-2,
        batch_size: 32,
        epochs: 10,
        dropout: 0.0,
        ..Default::default()
    };
    let table = embedding_table(train.vocab.len(), &cfg).unwrap();
    let (sketch, _) = train_sketch(&train, &table, &cfg).unwrap();
    let h = sketch_score_histogram(&sketch, &test, 100, 12).unwrap();
    for d in [&h.alpha, &h.inv_log, &h.squared_inv_log] {
        show(d);
        println!();
    }
}
