//! Turns one attention row into sampling ceilings under every strategy and
//! counts how often each key is selected.
//!
//! ```text
//! cargo run --example attentive_sampling
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use smartbird::sampler::{build_head_indices, sampling_probability, SamplingConfig, SamplingStrategy};
use smartbird::sketch::AttentionMatrix;

fn main() {
    let n = 8;
    // Every query shares one peaked attention row.
    let row = [0.50f32, 0.20, 0.10, 0.08, 0.05, 0.04, 0.02, 0.01];
    let a = AttentionMatrix::new(n, n, row.repeat(n));

    println!("{:>6} {:>10} {:>10} {:>10}", "α", "raw", "inv_log", "sq_inv_log");
    for &w in &row {
        let p = |s| sampling_probability(w as f64, s);
        println!(
            "{w:>6.2} {:>10.4} {:>10.4} {:>10.4}",
            p(SamplingStrategy::RawWeight),
            p(SamplingStrategy::InvLog),
            p(SamplingStrategy::SquaredInvLog)
        );
    }

    let trials = 5000;
    println!("\nselection frequency of each key, K=3, {trials} draws:");
    for strategy in SamplingStrategy::ALL {
        let cfg = SamplingConfig {
            strategy,
            k: 3,
            heads: 1,
            include_self: false,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut counts = vec![0usize; n];
        for _ in 0..trials {
            for &j in build_head_indices(&a, &cfg, &mut rng)[0].row(0) {
                counts[j as usize] += 1;
            }
        }
        let freq: Vec<String> = counts.iter().map(|&c| format!("{:.2}", c as f64 / trials as f64)).collect();
        println!("{:>16}: {}", strategy.name(), freq.join(" "));
    }

    let cfg = SamplingConfig {
        strategy: SamplingStrategy::SquaredInvLog,
        k: 3,
        heads: 4,
        include_self: false,
    };
    let heads = build_head_indices(&a, &cfg, &mut ChaCha8Rng::seed_from_u64(1));
    println!("\nquery 0 keys per head (each head draws its own scores):");
    for (h, m) in heads.iter().enumerate() {
        println!("  head {h}: {:?}", m.row(0));
    }
}
