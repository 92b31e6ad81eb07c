//! Reverse-mode autodiff on a small two-layer classifier, checked against
//! central finite differences.
//!
//! ```text
//! cargo run --example autodiff_gradcheck
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smartbird::tensor::{Tape, Tensor, Var};

/// `cross_entropy(relu(x·w1)·w2)`, recorded on `tape`.
fn loss(tape: &mut Tape<f64>, x: &Tensor<f64>, w1: &Tensor<f64>, w2: &Tensor<f64>) -> (Var, Var) {
    let x = tape.constant(x.clone());
    let w1v = tape.leaf(w1.clone());
    let w2v = tape.leaf(w2.clone());
    let h = tape.matmul(x, w1v).unwrap();
    let h = tape.relu(h);
    let logits = tape.matmul(h, w2v).unwrap();
    (tape.cross_entropy(logits, &[0, 2, 1]).unwrap(), w1v)
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut rand = |shape: [usize; 2]| Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0));
    let (x, mut w1, w2) = (rand([3, 5]), rand([5, 4]), rand([4, 3]));

    let mut tape = Tape::new();
    let (l, w1v) = loss(&mut tape, &x, &w1, &w2);
    tape.backward(l).unwrap();
    let analytic = tape.grad(w1v).unwrap().to_vec();
    println!("loss {:.6}, {} nodes on the tape", tape.value(l).data()[0], tape.len());

    let eps = 1e-5;
    let mut worst = 0.0f64;
    println!("{:>5} {:>12} {:>12}", "w1[i]", "analytic", "numeric");
    for i in 0..w1.numel() {
        let x0 = w1.data()[i];
        let mut f = |v: f64| {
            w1.data_mut()[i] = v;
            let mut t = Tape::no_grad();
            let (l, _) = loss(&mut t, &x, &w1, &w2);
            t.value(l).data()[0]
        };
        let numeric = (f(x0 + eps) - f(x0 - eps)) / (2.0 * eps);
        w1.data_mut()[i] = x0;
        worst = worst.max((numeric - analytic[i]).abs());
        if i < 6 {
            println!("{i:>5} {:>12.8} {numeric:>12.8}", analytic[i]);
        }
    }
    println!("worst absolute difference over {} entries: {worst:.2e}", w1.numel());
}
