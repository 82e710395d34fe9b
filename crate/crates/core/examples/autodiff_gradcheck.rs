//! Backprop through a tiny two-layer network, checked against central
//! differences.
//!
//! ```text
//! cargo run --example autodiff_gradcheck
//! ```

use gnnformer::tensor::{Matrix, SeededRng, Tape};
use rand::{Rng, SeedableRng};

fn loss_of(x: &Matrix, w1: &Matrix, w2: &Matrix) -> f64 {
    let mut tape = Tape::new();
    let (x, w1, w2) = (tape.constant(x.clone()), tape.constant(w1.clone()), tape.constant(w2.clone()));
    let h = tape.matmul(x, w1).unwrap();
    let h = tape.swish(h);
    let out = tape.matmul(h, w2).unwrap();
    let s = tape.sum(out);
    tape.value(s).item()
}

fn main() {
    let mut rng = SeededRng::seed_from_u64(7);
    let mut random = |r, c| Matrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0));
    let x = random(5, 3);
    let w1 = random(3, 4);
    let w2 = random(4, 2);

    let mut tape = Tape::new();
    let xt = tape.constant(x.clone());
    let w1t = tape.leaf(w1.clone(), true);
    let w2t = tape.leaf(w2.clone(), true);
    let h = tape.matmul(xt, w1t).unwrap();
    let h = tape.swish(h);
    let out = tape.matmul(h, w2t).unwrap();
    let s = tape.sum(out);
    tape.backward(s).unwrap();
    let g1 = tape.grad(w1t).unwrap().clone();

    let step = 1e-6;
    let mut worst: f64 = 0.0;
    for k in 0..w1.as_slice().len() {
        let (mut plus, mut minus) = (w1.clone(), w1.clone());
        plus.as_mut_slice()[k] += step;
        minus.as_mut_slice()[k] -= step;
        let numeric = (loss_of(&x, &plus, &w2) - loss_of(&x, &minus, &w2)) / (2.0 * step);
        let analytic = g1.as_slice()[k];
        worst = worst.max((numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-4));
        println!("w1[{k:2}]  backprop {analytic:+.8}  numeric {numeric:+.8}");
    }
    println!("max relative error {worst:.2e}");
}
