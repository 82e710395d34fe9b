#![allow(dead_code)]

use gnnformer::graph::{CsrGraph, GraphBundle};
use gnnformer::model::NodeClassifier;
use gnnformer::tensor::{Matrix, SeededRng, Tape, Tensor};
use gnnformer::training::cross_entropy_loss;
use rand::{Rng, SeedableRng};

pub fn rng(seed: u64) -> SeededRng {
    SeededRng::seed_from_u64(seed)
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut SeededRng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

pub fn random_edges(n: usize, p: f64, rng: &mut SeededRng) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    edges
}

/// Random graph, Gaussian-ish features and labels cycling through classes.
pub fn random_bundle(n: usize, d: usize, c: usize, p: f64, seed: u64) -> GraphBundle {
    let mut r = rng(seed);
    let edges = random_edges(n, p, &mut r);
    let graph = CsrGraph::from_edge_list(n, &edges).unwrap();
    let features = random_matrix(n, d, &mut r);
    GraphBundle::new(graph, features, (0..n).map(|i| i % c).collect(), c).unwrap()
}

/// Dense 0/1 adjacency straight from an edge list.
pub fn dense_adjacency(n: usize, edges: &[(usize, usize)]) -> Matrix {
    let mut a = Matrix::zeros(n, n);
    for &(i, j) in edges {
        if i != j {
            a.set(i, j, 1.0);
            a.set(j, i, 1.0);
        }
    }
    a
}

/// `D̃^{-1/2} (A + I) D̃^{-1/2}` computed densely.
pub fn dense_gcn_operator(a: &Matrix) -> Matrix {
    let n = a.rows();
    let mut tilde = a.clone();
    for i in 0..n {
        tilde.set(i, i, tilde.get(i, i) + 1.0);
    }
    let deg: Vec<f64> = (0..n).map(|i| tilde.row(i).iter().sum()).collect();
    Matrix::from_fn(n, n, |i, j| tilde.get(i, j) / (deg[i] * deg[j]).sqrt())
}

/// Relative error with a small absolute floor so vanishing gradients do not
/// blow up the ratio.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

/// Cross-entropy over `mask` in evaluation mode.
pub fn eval_loss(model: &dyn NodeClassifier, labels: &[usize], mask: &[usize]) -> f64 {
    let mut tape = Tape::new();
    let bound = model.params().bind(&mut tape);
    let pred = model.forward(&mut tape, &bound, false, &mut rng(0)).unwrap();
    let loss = cross_entropy_loss(&mut tape, pred, labels, mask).unwrap();
    tape.value(loss).item()
}

/// Largest relative error between backprop and central differences over
/// every parameter scalar of `model`.
pub fn model_gradcheck(model: &mut dyn NodeClassifier, labels: &[usize], mask: &[usize], step: f64) -> f64 {
    let mut tape = Tape::new();
    let bound = model.params().bind(&mut tape);
    let pred = model.forward(&mut tape, &bound, false, &mut rng(0)).unwrap();
    let loss = cross_entropy_loss(&mut tape, pred, labels, mask).unwrap();
    tape.backward(loss).unwrap();
    let grads = bound.grads(&tape);

    let mut worst: f64 = 0.0;
    for (k, grad) in grads.iter().enumerate() {
        let len = model.params().entries()[k].value.as_slice().len();
        for i in 0..len {
            let original = model.params().entries()[k].value.as_slice()[i];
            model.params_mut().entries_mut()[k].value.as_mut_slice()[i] = original + step;
            let plus = eval_loss(model, labels, mask);
            model.params_mut().entries_mut()[k].value.as_mut_slice()[i] = original - step;
            let minus = eval_loss(model, labels, mask);
            model.params_mut().entries_mut()[k].value.as_mut_slice()[i] = original;
            let numeric = (plus - minus) / (2.0 * step);
            let analytic = grad.as_ref().map_or(0.0, |g| g.as_slice()[i]);
            worst = worst.max(rel_err(analytic, numeric));
        }
    }
    worst
}

/// Central-difference check of an arbitrary tape function of `inputs`,
/// reduced to a scalar by a fixed random weighting of its output.
pub fn op_gradcheck(inputs: &[Matrix], step: f64, build: impl Fn(&mut Tape, &[Tensor]) -> Tensor) -> f64 {
    let mut probe = Tape::new();
    let leaves: Vec<Tensor> = inputs.iter().map(|m| probe.constant(m.clone())).collect();
    let shape = build(&mut probe, &leaves).shape();
    let weights = random_matrix(shape.0, shape.1, &mut rng(1234));

    let scalar = |tape: &mut Tape, out: Tensor| {
        let w = tape.constant(weights.clone());
        let prod = tape.mul(out, w).unwrap();
        tape.sum(prod)
    };
    let value_at = |values: &[Matrix]| {
        let mut tape = Tape::new();
        let leaves: Vec<Tensor> = values.iter().map(|m| tape.constant(m.clone())).collect();
        let out = build(&mut tape, &leaves);
        let s = scalar(&mut tape, out);
        tape.value(s).item()
    };

    let mut tape = Tape::new();
    let leaves: Vec<Tensor> = inputs.iter().map(|m| tape.leaf(m.clone(), true)).collect();
    let out = build(&mut tape, &leaves);
    let s = scalar(&mut tape, out);
    tape.backward(s).unwrap();

    let mut worst: f64 = 0.0;
    for (idx, leaf) in leaves.iter().enumerate() {
        for k in 0..inputs[idx].as_slice().len() {
            let mut plus = inputs.to_vec();
            plus[idx].as_mut_slice()[k] += step;
            let mut minus = inputs.to_vec();
            minus[idx].as_mut_slice()[k] -= step;
            let numeric = (value_at(&plus) - value_at(&minus)) / (2.0 * step);
            let analytic = tape.grad(*leaf).map_or(0.0, |g| g.as_slice()[k]);
            worst = worst.max(rel_err(analytic, numeric));
        }
    }
    worst
}

/// Random permutation of `0..n`.
pub fn permutation(n: usize, rng: &mut SeededRng) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

/// The bundle relabeled so that new node `k` is old node `order[k]`.
pub fn permute_bundle(b: &GraphBundle, order: &[usize]) -> GraphBundle {
    GraphBundle::new(
        b.graph.permuted(order).unwrap(),
        b.features.select_rows(order),
        order.iter().map(|&i| b.labels[i]).collect(),
        b.num_classes,
    )
    .unwrap()
}
