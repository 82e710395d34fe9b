use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};

use super::*;
use crate::error::Error;
use crate::graph::CsrGraph;

fn random(rows: usize, cols: usize, rng: &mut SeededRng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

/// Central-difference oracle. The loss is `Σ out ⊙ R` for a fixed random
/// `R`, so ops whose outputs have constant sums are still exercised.
/// Returns the largest `|analytic − numeric| / max(|analytic|, |numeric|, 1e-4)`.
fn fd_check(inputs: &[Matrix], step: f64, build: impl Fn(&mut Tape, &[Tensor]) -> Tensor) -> f64 {
    let mut probe = Tape::new();
    let leaves: Vec<Tensor> = inputs.iter().map(|m| probe.leaf(m.clone(), true)).collect();
    let out = build(&mut probe, &leaves);
    let mut rng = SeededRng::seed_from_u64(99);
    let weights = random(out.rows(), out.cols(), &mut rng);

    let loss_of = |tape: &mut Tape, out: Tensor| {
        let w = tape.constant(weights.clone());
        let prod = tape.mul(out, w).unwrap();
        tape.sum(prod)
    };
    let value_at = |values: &[Matrix]| {
        let mut tape = Tape::new();
        let leaves: Vec<Tensor> = values.iter().map(|m| tape.leaf(m.clone(), false)).collect();
        let out = build(&mut tape, &leaves);
        let loss = loss_of(&mut tape, out);
        tape.value(loss).item()
    };

    let mut tape = Tape::new();
    let leaves: Vec<Tensor> = inputs.iter().map(|m| tape.leaf(m.clone(), true)).collect();
    let out = build(&mut tape, &leaves);
    let loss = loss_of(&mut tape, out);
    tape.backward(loss).unwrap();

    let mut worst: f64 = 0.0;
    for (idx, leaf) in leaves.iter().enumerate() {
        let analytic = tape.grad(*leaf).cloned().unwrap_or_else(|| Matrix::zeros(leaf.rows(), leaf.cols()));
        for k in 0..inputs[idx].as_slice().len() {
            let mut plus = inputs.to_vec();
            plus[idx].as_mut_slice()[k] += step;
            let mut minus = inputs.to_vec();
            minus[idx].as_mut_slice()[k] -= step;
            let numeric = (value_at(&plus) - value_at(&minus)) / (2.0 * step);
            let a = analytic.as_slice()[k];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-4);
            worst = worst.max(err);
        }
    }
    worst
}

fn random_graph(n: usize, p: f64, rng: &mut SeededRng) -> CsrGraph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    CsrGraph::from_edge_list(n, &edges).unwrap()
}

#[test]
fn matmul_identity() {
    let mut tape = Tape::new();
    let m = Matrix::from_rows(&[[1.5, -2.0], [0.25, 4.0]]);
    let i = tape.constant(Matrix::identity(2));
    let a = tape.constant(m.clone());
    let out = tape.matmul(i, a).unwrap();
    assert_eq!(tape.value(out), &m);
}

#[test]
fn matmul_hand_sum() {
    let mut tape = Tape::new();
    let a = tape.constant(Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]));
    let b = tape.constant(Matrix::from_rows(&[[1.0], [1.0]]));
    let out = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(out), &Matrix::from_rows(&[[3.0], [7.0]]));
}

#[test]
fn matmul_shape_error_names_both() {
    let mut tape = Tape::new();
    let a = tape.constant(Matrix::zeros(2, 3));
    let b = tape.constant(Matrix::zeros(4, 2));
    let msg = tape.matmul(a, b).unwrap_err().to_string();
    assert!(msg.contains("(2, 3)") && msg.contains("(4, 2)"), "{msg}");
}

#[test]
fn matmul_gradient_matches_fd() {
    let mut rng = SeededRng::seed_from_u64(1);
    let inputs = [random(3, 4, &mut rng), random(4, 2, &mut rng)];
    let err = fd_check(&inputs, 1e-5, |t, x| t.matmul(x[0], x[1]).unwrap());
    assert!(err < 1e-4, "{err}");
}

#[test]
fn activation_values() {
    let mut tape = Tape::new();
    let x = tape.constant(Matrix::from_rows(&[[0.0, -3.0, 3.0]]));
    let s = tape.swish(x);
    let r = tape.relu(x);
    assert_eq!(tape.value(s).get(0, 0), 0.0);
    assert_eq!(tape.value(r).row(0), &[0.0, 0.0, 3.0]);
    let g = tape.gelu(x);
    assert_eq!(tape.value(g).get(0, 0), 0.0);
    assert!((tape.value(g).get(0, 2) - 2.996_362_4).abs() < 1e-6);
}

#[test]
fn swish_derivative_at_one() {
    let err = fd_check(&[Matrix::scalar(1.0)], 1e-5, |t, x| t.swish(x[0]));
    assert!(err < 1e-5, "{err}");
}

#[test]
fn elementwise_gradients_match_fd() {
    let mut rng = SeededRng::seed_from_u64(2);
    let inputs = [random(4, 5, &mut rng), random(4, 5, &mut rng)];
    for op in [
        Elementwise::Add,
        Elementwise::Mul,
        Elementwise::Relu,
        Elementwise::Sigmoid,
        Elementwise::Swish,
        Elementwise::Gelu,
    ] {
        let err = fd_check(&inputs, 1e-5, |t, x| t.elementwise(op, x[0], Some(x[1])).unwrap());
        assert!(err < 1e-4, "{op:?}: {err}");
    }
    let err = fd_check(&inputs[..1], 1e-5, |t, x| t.leaky_relu(x[0], 0.2));
    assert!(err < 1e-4, "{err}");
}

#[test]
fn binary_shape_mismatch() {
    let mut tape = Tape::new();
    let a = tape.constant(Matrix::zeros(2, 2));
    let b = tape.constant(Matrix::zeros(2, 3));
    assert!(matches!(tape.add(a, b), Err(Error::Dimension { .. })));
    assert!(matches!(tape.mul(a, b), Err(Error::Dimension { .. })));
    assert!(tape.elementwise(Elementwise::Add, a, None).is_err());
}

fn ln(t: &mut Tape, x: Tensor, eps: f64) -> Tensor {
    let d = x.cols();
    let g = t.constant(Matrix::filled(1, d, 1.0));
    let b = t.constant(Matrix::zeros(1, d));
    t.layer_norm(x, g, b, eps).unwrap()
}

#[test]
fn layer_norm_constant_row_is_zero() {
    let mut tape = Tape::new();
    let x = tape.constant(Matrix::filled(1, 4, 2.5));
    let y = ln(&mut tape, x, 1e-5);
    assert!(tape.value(y).as_slice().iter().all(|&v| v == 0.0));
}

#[test]
fn layer_norm_symmetric_pair() {
    let mut tape = Tape::new();
    let x = tape.constant(Matrix::from_rows(&[[1.0, 3.0]]));
    let y = ln(&mut tape, x, 1e-14);
    let v = tape.value(y);
    assert!((v.get(0, 0) + 1.0).abs() < 1e-12 && (v.get(0, 1) - 1.0).abs() < 1e-12);
}

#[test]
fn layer_norm_gradient_matches_fd() {
    let mut rng = SeededRng::seed_from_u64(3);
    let inputs = [random(5, 8, &mut rng), random(1, 8, &mut rng), random(1, 8, &mut rng)];
    let err = fd_check(&inputs, 1e-5, |t, x| t.layer_norm(x[0], x[1], x[2], 1e-5).unwrap());
    assert!(err < 1e-4, "{err}");
}

#[test]
fn layer_norm_rejects_bad_eps() {
    let mut tape = Tape::new();
    let x = tape.constant(Matrix::zeros(2, 2));
    let g = tape.constant(Matrix::zeros(1, 2));
    assert!(tape.layer_norm(x, g, g, 0.0).is_err());
    let wide = tape.constant(Matrix::zeros(1, 3));
    assert!(tape.layer_norm(x, wide, g, 1e-5).is_err());
}

#[test]
fn softmax_equal_scores() {
    let mut tape = Tape::new();
    let x = tape.constant(Matrix::filled(1, 4, 0.7));
    let y = tape.row_softmax(x, None).unwrap();
    assert!(tape.value(y).as_slice().iter().all(|&v| (v - 0.25).abs() < 1e-15));
}

#[test]
fn softmax_mask_single_survivor() {
    let mut tape = Tape::new();
    let x = tape.constant(Matrix::from_rows(&[[3.0, -1.0, 8.0]]));
    let y = tape.row_softmax(x, Some(&[false, true, false])).unwrap();
    assert_eq!(tape.value(y).row(0), &[0.0, 1.0, 0.0]);
}

#[test]
fn softmax_fully_masked_row_errors() {
    let mut tape = Tape::new();
    let x = tape.constant(Matrix::zeros(2, 2));
    let err = tape.row_softmax(x, Some(&[true, false, false, false])).unwrap_err();
    assert!(matches!(err, Error::DegenerateRow { row: 1 }));
}

#[test]
fn softmax_gradient_matches_fd() {
    let mut rng = SeededRng::seed_from_u64(4);
    let err = fd_check(&[random(4, 4, &mut rng)], 1e-5, |t, x| t.row_softmax(x[0], None).unwrap());
    assert!(err < 1e-4, "{err}");
    let mask = [true, false, true, true, false, true, true, true, true, true, false, false, true, true, true, false];
    let err = fd_check(&[random(4, 4, &mut rng)], 1e-5, |t, x| t.row_softmax(x[0], Some(&mask)).unwrap());
    assert!(err < 1e-4, "{err}");
}

#[test]
fn spmm_self_loops_only_is_identity() {
    let g = Arc::new(CsrGraph::from_edge_list(3, &[]).unwrap().with_self_loops());
    let mut tape = Tape::new();
    let m = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
    let h = tape.constant(m.clone());
    let out = tape.spmm(&g, h).unwrap();
    assert_eq!(tape.value(out), &m);
}

#[test]
fn spmm_path_swaps_rows() {
    let g = Arc::new(CsrGraph::from_edge_list(2, &[(0, 1)]).unwrap());
    let mut tape = Tape::new();
    let h = tape.constant(Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]));
    let out = tape.spmm(&g, h).unwrap();
    assert_eq!(tape.value(out), &Matrix::from_rows(&[[3.0, 4.0], [1.0, 2.0]]));
}

#[test]
fn spmm_matches_dense_product() {
    let mut rng = SeededRng::seed_from_u64(5);
    let g = Arc::new(random_graph(10, 0.3, &mut rng).sym_norm_weights(true).unwrap());
    let h = random(10, 3, &mut rng);
    let mut tape = Tape::new();
    let ht = tape.constant(h.clone());
    let out = tape.spmm(&g, ht).unwrap();
    let dense = g.to_dense().matmul(&h).unwrap();
    assert!(tape.value(out).max_abs_diff(&dense) < 1e-10);
}

#[test]
fn spmm_node_count_mismatch() {
    let g = Arc::new(CsrGraph::from_edge_list(3, &[]).unwrap());
    let mut tape = Tape::new();
    let h = tape.constant(Matrix::zeros(4, 2));
    assert!(matches!(tape.spmm(&g, h), Err(Error::Dimension { .. })));
}

#[test]
fn sparse_op_gradients_match_fd() {
    let mut rng = SeededRng::seed_from_u64(6);
    let g = Arc::new(random_graph(7, 0.4, &mut rng).mean_weights());
    let err = fd_check(&[random(7, 3, &mut rng)], 1e-5, |t, x| t.spmm(&g, x[0]).unwrap());
    assert!(err < 1e-4, "{err}");

    let gl = Arc::new(random_graph(7, 0.4, &mut rng).with_self_loops());
    let inputs = [random(7, 1, &mut rng), random(7, 1, &mut rng), random(7, 3, &mut rng)];
    let err = fd_check(&inputs, 1e-5, |t, x| {
        let e = t.edge_scores(&gl, x[0], x[1]).unwrap();
        let e = t.leaky_relu(e, 0.2);
        let a = t.edge_softmax(&gl, e).unwrap();
        t.edge_aggregate(&gl, a, x[2]).unwrap()
    });
    assert!(err < 1e-4, "{err}");
}

#[test]
fn misc_op_gradients_match_fd() {
    let mut rng = SeededRng::seed_from_u64(7);
    let inputs = [Matrix::scalar(0.3), random(3, 4, &mut rng), random(3, 4, &mut rng), random(3, 2, &mut rng)];
    let err = fd_check(&inputs, 1e-5, |t, x| t.mix(x[0], x[1], x[2]).unwrap());
    assert!(err < 1e-4, "{err}");
    let err = fd_check(&inputs[1..], 1e-5, |t, x| t.concat_cols(&[x[0], x[2], x[1]]).unwrap());
    assert!(err < 1e-4, "{err}");
    let err = fd_check(&inputs[1..2], 1e-5, |t, x| {
        let tr = t.transpose(x[0]);
        t.scale(tr, -1.7)
    });
    assert!(err < 1e-4, "{err}");
    let probs = Matrix::from_fn(3, 4, |_, _| rng.gen_range(0.1..1.0));
    let err = fd_check(&[probs], 1e-6, |t, x| t.nll_sum(x[0], &[(0, 1), (2, 3), (1, 0), (2, 3)]).unwrap());
    assert!(err < 1e-4, "{err}");
}

#[test]
fn dropout_rate_zero_and_eval_are_identity() {
    let mut rng = SeededRng::seed_from_u64(8);
    let mut tape = Tape::new();
    let x = tape.constant(random(5, 5, &mut rng));
    assert_eq!(tape.dropout(x, 0.0, true, &mut rng).unwrap(), x);
    assert_eq!(tape.dropout(x, 0.9, false, &mut rng).unwrap(), x);
    assert!(matches!(tape.dropout(x, 1.0, true, &mut rng), Err(Error::Config(_))));
}

#[test]
fn dropout_survivor_fraction() {
    let mut rng = SeededRng::seed_from_u64(9);
    let mut tape = Tape::new();
    let x = tape.constant(Matrix::filled(100, 100, 1.0));
    let y = tape.dropout(x, 0.5, true, &mut rng).unwrap();
    let values = tape.value(y).as_slice();
    let survivors = values.iter().filter(|&&v| v != 0.0).count() as f64 / 1e4;
    assert!((survivors - 0.5).abs() <= 0.02, "{survivors}");
    assert!(values.iter().all(|&v| v == 0.0 || v == 2.0));
}

#[test]
fn backward_sum_gives_ones() {
    let mut tape = Tape::new();
    let x = tape.leaf(Matrix::zeros(3, 2), true);
    let s = tape.sum(x);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &Matrix::filled(3, 2, 1.0));
}

#[test]
fn backward_square() {
    let mut tape = Tape::new();
    let x = tape.leaf(Matrix::scalar(2.0), true);
    let sq = tape.mul(x, x).unwrap();
    let s = tape.sum(sq);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap().item(), 4.0);
}

#[test]
fn backward_contract_errors() {
    let mut tape = Tape::new();
    let x = tape.leaf(Matrix::zeros(2, 2), true);
    assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    let s = tape.sum(x);
    tape.backward(s).unwrap();
    assert!(matches!(tape.backward(s), Err(Error::Contract(_))));
    tape.zero_grad();
    assert!(tape.grad(x).is_none());
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &Matrix::filled(2, 2, 1.0));
}

#[test]
fn constants_get_no_grad() {
    let mut tape = Tape::new();
    let w = tape.leaf(Matrix::filled(2, 2, 0.5), true);
    let c = tape.constant(Matrix::filled(2, 2, 3.0));
    let p = tape.matmul(c, w).unwrap();
    let r = tape.relu(p);
    let s = tape.sum(r);
    tape.backward(s).unwrap();
    assert!(tape.grad(c).is_none());
    assert!(tape.grad(w).is_some());
}

#[test]
fn replay_is_bit_identical() {
    let run = || {
        let mut rng = SeededRng::seed_from_u64(10);
        let mut tape = Tape::new();
        let x = tape.leaf(random(6, 6, &mut rng), true);
        let w = tape.leaf(random(6, 6, &mut rng), true);
        let h = tape.matmul(x, w).unwrap();
        let h = tape.dropout(h, 0.3, true, &mut rng).unwrap();
        let p = tape.row_softmax(h, None).unwrap();
        let s = tape.sum(p);
        let l = tape.nll_sum(p, &[(0, 0), (3, 2)]).unwrap();
        tape.backward(l).unwrap();
        let _ = s;
        (tape.value(p).clone(), tape.grad(w).unwrap().clone())
    };
    let (a, ga) = run();
    let (b, gb) = run();
    assert_eq!(a.as_slice(), b.as_slice());
    assert_eq!(ga.as_slice(), gb.as_slice());
}

proptest! {
    #[test]
    fn softmax_rows_are_stochastic(values in proptest::collection::vec(-30.0f64..30.0, 12)) {
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::from_vec(3, 4, values).unwrap());
        let y = tape.row_softmax(x, None).unwrap();
        let v = tape.value(y);
        for r in 0..3 {
            prop_assert!(v.row(r).iter().all(|&p| p >= 0.0));
            prop_assert!((v.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn layer_norm_rows_standardized(values in proptest::collection::vec(-10.0f64..10.0, 16)) {
        let eps = 1e-5;
        let m = Matrix::from_vec(2, 8, values).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(m.clone());
        let y = ln(&mut tape, x, eps);
        let v = tape.value(y);
        for r in 0..2 {
            let row = v.row(r);
            let mean = row.iter().sum::<f64>() / 8.0;
            let var = row.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 8.0;
            let raw = m.row(r);
            let rm = raw.iter().sum::<f64>() / 8.0;
            let rv = raw.iter().map(|a| (a - rm).powi(2)).sum::<f64>() / 8.0;
            prop_assert!(mean.abs() < 1e-7);
            prop_assert!((var - rv / (rv + eps)).abs() < 1e-5);
        }
    }

    #[test]
    fn spmm_equals_dense(seed in 0u64..1000, n in 1usize..64) {
        let mut rng = SeededRng::seed_from_u64(seed);
        let g = Arc::new(random_graph(n, 0.15, &mut rng).sym_norm_weights(true).unwrap());
        let h = random(n, 3, &mut rng);
        let mut tape = Tape::new();
        let ht = tape.constant(h.clone());
        let out = tape.spmm(&g, ht).unwrap();
        prop_assert!(tape.value(out).max_abs_diff(&g.to_dense().matmul(&h).unwrap()) < 1e-10);
    }
}
