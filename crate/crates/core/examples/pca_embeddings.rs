//! Builds a full-width embedding table and its low-dimensional PCA
//! projection, the input table of the sketch model.
//!
//! ```text
//! cargo run --example pca_embeddings
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use smartbird::textpipe::{pca_project, EmbeddingTable, PcaOptions};

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (vocab, dim, tiny) = (500, 64, 4);
    let table = EmbeddingTable::random(vocab, dim, tiny, &mut rng).unwrap();
    println!(
        "{vocab}×{dim} table projected to {vocab}×{tiny}: {:.1}% of the variance kept",
        100.0 * table.explained_variance
    );

    let pca = pca_project(&table.full, 8, PcaOptions::default()).unwrap();
    println!("leading eigenvalues of the embedding covariance:");
    for (i, l) in pca.eigenvalues.iter().enumerate() {
        println!("  λ{i} = {l:.5}");
    }
    println!("first tiny rows (row 0 is PAD and stays zero):");
    for r in 0..3 {
        println!("  {r}: {:?}", table.tiny.row(r));
    }
}
