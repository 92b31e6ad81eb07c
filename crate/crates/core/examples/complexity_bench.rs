//! Wall-clock scaling of one dense layer against the sketch, sampling and
//! sparse stages, with log-log slopes and the measured crossover length.
//!
//! ```text
//! cargo run --release --example complexity_bench
//! ```

use smartbird::analysis::{measured_crossover, BenchConfig};

fn main() {
    let cfg = BenchConfig {
        grid: vec![128, 256, 512, 1024],
        reps: 3,
        ..Default::default()
    };
    println!("D={} h={} d={} K={}, median of {} reps", cfg.dim, cfg.heads, cfg.tiny_dim, cfg.k, cfg.reps);
    let r = measured_crossover(&cfg).unwrap();
    println!(
        "{:>6} {:>10} {:>10} {:>10} {:>10} {:>10}",
        "N", "dense ms", "sketch ms", "sample ms", "sparse ms", "smart ms"
    );
    for row in &r.rows {
        println!(
            "{:>6} {:>10.2} {:>10.2} {:>10.2} {:>10.2} {:>10.2}",
            row.n, row.dense_ms, row.sketch_ms, row.sampling_ms, row.sparse_ms, row.smart_ms
        );
    }
    println!(
        "slopes: dense {:.2}, sparse {:.2}, smart {:.2}",
        r.dense_slope, r.sparse_slope, r.smart_slope
    );
    match r.crossover_n {
        Some(n) => println!("smart is faster from N = {n}"),
        None => println!("no crossover on this grid"),
    }
}
