//! Runs each propagator once on a 6-node path graph and prints the output
//! rows, plus the attention coefficients of the first GAT head.

use std::sync::Arc;

use gnnformer::graph::CsrGraph;
use gnnformer::propagation::{
    dense_mha_propagate, gat_propagate, gcn_propagate, sage_propagate, GatHead, GraphContext, MhaHead,
};
use gnnformer::tensor::{Matrix, SeededRng, Tape};
use rand::{Rng, SeedableRng};

fn show(label: &str, m: &Matrix) {
    println!("{label}");
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:+.3}")).collect();
        println!("  {}", row.join(" "));
    }
}

fn main() -> gnnformer::Result<()> {
    let edges: Vec<(usize, usize)> = (0..5).map(|i| (i, i + 1)).collect();
    let graph = CsrGraph::from_edge_list(6, &edges)?;
    let ctx = GraphContext::new(&graph)?;
    let mut rng = SeededRng::seed_from_u64(3);
    let mut random = |r, c| Matrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0));
    let h0 = Matrix::from_fn(6, 2, |i, j| if j == 0 { i as f64 } else { 1.0 });

    let mut tape = Tape::new();
    let h = tape.constant(h0.clone());
    let out = gcn_propagate(&mut tape, &ctx.gcn, h)?;
    show("gcn", tape.value(out));

    let (ws, wn) = (tape.constant(random(2, 2)), tape.constant(random(2, 2)));
    let out = sage_propagate(&mut tape, &ctx.sage_mean, h, ws, wn)?;
    show("sage", tape.value(out));

    let heads: Vec<GatHead> = (0..2)
        .map(|_| GatHead {
            w: tape.constant(random(2, 2)),
            a_target: tape.constant(random(2, 1)),
            a_neighbor: tape.constant(random(2, 1)),
        })
        .collect();
    let (out, coeffs) = gat_propagate(&mut tape, &ctx.gat, h, &heads, 0.0, false, &mut SeededRng::seed_from_u64(0))?;
    show("gat (2 heads concatenated)", tape.value(out));
    let g: &Arc<CsrGraph> = &ctx.gat;
    let alpha = tape.value(coeffs[0]).as_slice();
    println!("gat head 0 coefficients");
    for i in 0..g.n() {
        let pairs: Vec<String> = g
            .row_range(i)
            .map(|k| format!("{}:{:.3}", g.col_indices()[k], alpha[k]))
            .collect();
        println!("  {i} <- {}", pairs.join(" "));
    }

    let heads = [MhaHead {
        q: tape.constant(random(2, 2)),
        k: tape.constant(random(2, 2)),
        v: tape.constant(random(2, 2)),
    }];
    let (out, _) = dense_mha_propagate(&mut tape, h, &heads)?;
    show("dense attention (ignores edges)", tape.value(out));
    Ok(())
}
