//! Test accuracy of the sparse model under each sampling strategy, sharing
//! one trained sketch per seed.
//!
//! ```text
//! cargo run --release --example strategy_ablation
//! ```
//!
//! Runs two seeds on a reduced task. `smartbird study ablate --config
//! configs/synthetic.json` runs the five-seed protocol.

use smartbird::analysis::ablation_run;
use smartbird::sampler::SamplingStrategy;
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
        k: 4,
        layers: 2,
        max_len: 32,
        lr: 3e-3,
        sketch_lr: Some(1e-2),
        batch_size: 32,
        epochs: 4,
        sketch_epochs: Some(30),
        dropout: 0.0,
        ..Default::default()
    };
    let r = ablation_run(&train, &test, &cfg, &SamplingStrategy::ALL, &[0, 1]).unwrap();
    for run in &r.runs {
        println!("seed {} {:<16} accuracy {:.3}", run.seed, run.strategy.name(), run.accuracy);
    }
    println!();
    for row in &r.rows {
        println!(
            "{:<16} accuracy {:.3} ± {:.3}, macro-F {:.3}",
            row.strategy.name(),
            row.mean_accuracy,
            row.std_accuracy,
            row.mean_macro_f
        );
    }
}
