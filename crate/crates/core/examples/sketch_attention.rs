//! Trains the d=4 sketch Transformer on the synthetic task and shows where
//! its attention goes: from the selector token toward the value token the
//! label depends on.
//!
//! ```text
//! cargo run --example sketch_attention
//! ```

use smartbird::textpipe::{synth_task, SynthConfig};
use smartbird::trainer::{embedding_table, evaluate, train_sketch, ModelConfig};

fn main() {
    let task = SynthConfig {
        n_examples: 2000,
        seq_len: 32,
        vocab_size: 32,
        pair_gap: 4,
        ..Default::default()
    };
    let (train, _) = synth_task(&task).unwrap();
    let (test, signals) = synth_task(&SynthConfig { seed: 1, n_examples: 200, ..task }).unwrap();
    let cfg = ModelConfig {
        dim: 32,
        heads: 4,
        layers: 1,
        max_len: 32,
        lr: 1e-2,
        batch_size: 32,
        epochs: 15,
        dropout: 0.0,
        ..Default::default()
    };
    let table = embedding_table(train.vocab.len(), &cfg).unwrap();
    let (sketch, metrics) = train_sketch(&train, &table, &cfg).unwrap();
    for r in &metrics.rows {
        println!("epoch {:>2} loss {:.4} train accuracy {:.3}", r.epoch, r.loss.unwrap(), r.accuracy);
    }
    println!("test accuracy {:.3}", evaluate(&sketch, &test, 0, 1).unwrap().accuracy);

    // Attention from each token position toward the label-bearing value token,
    // compared with a uniform row.
    let (mut from_selector, mut elsewhere) = (0.0, 0.0);
    for (ex, s) in test.examples.iter().zip(&signals) {
        let a = &sketch.attention(ex).unwrap()[0];
        let n = ex.attn_len;
        from_selector += a.get(s.selector_pos, s.target_pos()) as f64;
        elsewhere += (0..n).map(|q| a.get(q, s.target_pos()) as f64).sum::<f64>() / n as f64;
    }
    let m = test.len() as f64;
    println!(
        "mean α(selector → target) {:.3}, mean α(any → target) {:.3}, uniform {:.3}",
        from_selector / m,
        elsewhere / m,
        1.0 / task.seq_len as f64
    );
}
