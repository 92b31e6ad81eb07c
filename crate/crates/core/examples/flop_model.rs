//! Analytic operation counts of dense and smart attention across sequence
//! lengths, and the length beyond which the smart attention terms are cheaper.
//!
//! ```text
//! cargo run --example flop_model
//! ```

use smartbird::analysis::{attention_crossover, flops_model, Architecture, FlopParams, FLOP_CONSTANTS};

fn main() {
    println!("{FLOP_CONSTANTS}\n");
    let base = FlopParams {
        n: 0,
        tiny_dim: 4,
        dim: 256,
        k: 20,
        heads: 8,
        layers: 1,
    };
    println!(
        "{:>6} {:>14} {:>14} {:>14} {:>8} {:>8}",
        "N", "N²d", "NKD", "N²D", "attn ×", "total ×"
    );
    for n in [64, 256, 1024, 4096, 16384] {
        let p = FlopParams { n, ..base };
        let s = flops_model(&p, Architecture::Smart);
        let d = flops_model(&p, Architecture::Dense);
        println!(
            "{n:>6} {:>14} {:>14} {:>14} {:>8.1} {:>8.2}",
            s.dominant_sketch,
            s.dominant_sparse,
            d.dominant_dense,
            d.attention_total as f64 / s.attention_total as f64,
            d.total as f64 / s.total as f64
        );
    }
    let c = attention_crossover(&base).unwrap();
    println!("\nsmart attention is cheaper once N > K·D/(D − d) = {c:.2}");
}
