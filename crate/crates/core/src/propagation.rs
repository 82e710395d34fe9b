//! Propagation (P) and transformation (T) operators and their two-slot
//! compositions.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::CsrGraph;
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{Tape, Tensor};

/// Slope of the LeakyReLU applied to attention logits.
pub const ATTENTION_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PropagatorKind {
    GcnLike,
    SageLike,
    GatLike,
    /// Global all-pairs attention; only the Transformer baseline uses it.
    DenseAttention,
}

impl PropagatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PropagatorKind::GcnLike => "gcn",
            PropagatorKind::SageLike => "sage",
            PropagatorKind::GatLike => "gat",
            PropagatorKind::DenseAttention => "dense",
        }
    }
}

impl fmt::Display for PropagatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PropagatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(PropagatorKind::GcnLike),
            "sage" => Ok(PropagatorKind::SageLike),
            "gat" => Ok(PropagatorKind::GatLike),
            "dense" => Ok(PropagatorKind::DenseAttention),
            _ => Err(Error::Config(format!("unknown propagator {s:?} (gcn, sage, gat, dense)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Slot {
    P,
    T,
}

/// Stack of two-slot blocks such as `TP+TP`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct OperatorSpec {
    blocks: Vec<[Slot; 2]>,
}

/// Largest block count accepted outside the depth diagnostic.
pub const MAX_BLOCKS: usize = 3;

impl OperatorSpec {
    pub fn new(blocks: Vec<[Slot; 2]>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::Config("operator spec needs at least one block".into()));
        }
        Ok(OperatorSpec { blocks })
    }

    pub fn blocks(&self) -> &[[Slot; 2]] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Errors unless there are between 1 and [`MAX_BLOCKS`] blocks.
    pub fn check_bounded(&self) -> Result<()> {
        if self.blocks.len() > MAX_BLOCKS {
            return Err(Error::Config(format!(
                "{} blocks requested, at most {MAX_BLOCKS} allowed",
                self.blocks.len()
            )));
        }
        Ok(())
    }

    /// `depth` copies of the first block.
    pub fn repeated(&self, depth: usize) -> Result<Self> {
        OperatorSpec::new(vec![self.blocks[0]; depth])
    }
}

impl fmt::Display for OperatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (b, block) in self.blocks.iter().enumerate() {
            if b > 0 {
                f.write_str("+")?;
            }
            for slot in block {
                f.write_str(match slot {
                    Slot::P => "P",
                    Slot::T => "T",
                })?;
            }
        }
        Ok(())
    }
}

impl FromStr for OperatorSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad operator spec {s:?}; expected blocks like TP+TP"));
        let blocks = s
            .split('+')
            .map(|block| {
                let slots: Vec<Slot> = block
                    .trim()
                    .chars()
                    .map(|c| match c.to_ascii_uppercase() {
                        'P' => Ok(Slot::P),
                        'T' => Ok(Slot::T),
                        _ => Err(bad()),
                    })
                    .collect::<Result<_>>()?;
                <[Slot; 2]>::try_from(slots).map_err(|_| bad())
            })
            .collect::<Result<Vec<_>>>()?;
        OperatorSpec::new(blocks)
    }
}

/// The graph operators every propagator may need, built once per graph.
#[derive(Clone, Debug)]
pub struct GraphContext {
    /// Raw 0/1 adjacency, no self-loops.
    pub adjacency: Arc<CsrGraph>,
    /// Symmetrically normalized adjacency with self-loops.
    pub gcn: Arc<CsrGraph>,
    /// Row-normalized adjacency (neighbor mean), no self-loops.
    pub sage_mean: Arc<CsrGraph>,
    /// Adjacency with self-loops, for neighborhood attention.
    pub gat: Arc<CsrGraph>,
}

impl GraphContext {
    pub fn new(graph: &CsrGraph) -> Result<Self> {
        Ok(GraphContext {
            adjacency: Arc::new(graph.clone()),
            gcn: Arc::new(graph.sym_norm_weights(true)?),
            sage_mean: Arc::new(graph.mean_weights()),
            gat: Arc::new(graph.with_self_loops()),
        })
    }

    pub fn n(&self) -> usize {
        self.adjacency.n()
    }
}

/// `dropout(ReLU(h · w))`.
pub fn transform<R: Rng + ?Sized>(
    tape: &mut Tape,
    h: Tensor,
    w: Tensor,
    dropout: f64,
    training: bool,
    rng: &mut R,
) -> Result<Tensor> {
    let z = tape.matmul(h, w)?;
    let z = tape.relu(z);
    tape.dropout(z, dropout, training, rng)
}

/// Parameter-free propagation over a normalized adjacency.
pub fn gcn_propagate(tape: &mut Tape, g_norm: &Arc<CsrGraph>, h: Tensor) -> Result<Tensor> {
    tape.spmm(g_norm, h)
}

/// `h · w_self + mean_neighbors(h) · w_neigh`; `mean_graph` must carry
/// `1/deg` weights (see [`CsrGraph::mean_weights`]).
pub fn sage_propagate(
    tape: &mut Tape,
    mean_graph: &Arc<CsrGraph>,
    h: Tensor,
    w_self: Tensor,
    w_neigh: Tensor,
) -> Result<Tensor> {
    let own = tape.matmul(h, w_self)?;
    let mean = tape.spmm(mean_graph, h)?;
    let neigh = tape.matmul(mean, w_neigh)?;
    tape.add(own, neigh)
}

/// Projection and attention vectors of one attention head.
#[derive(Clone, Copy, Debug)]
pub struct GatHead {
    pub w: Tensor,
    pub a_target: Tensor,
    pub a_neighbor: Tensor,
}

/// Multi-head neighborhood attention over `g_loops`, which should contain
/// self-loops. Returns the concatenated head outputs and each head's
/// per-edge coefficients (before attention dropout).
pub fn gat_propagate<R: Rng + ?Sized>(
    tape: &mut Tape,
    g_loops: &Arc<CsrGraph>,
    h: Tensor,
    heads: &[GatHead],
    dropout: f64,
    training: bool,
    rng: &mut R,
) -> Result<(Tensor, Vec<Tensor>)> {
    let mut outputs = Vec::with_capacity(heads.len());
    let mut coefficients = Vec::with_capacity(heads.len());
    for head in heads {
        let wh = tape.matmul(h, head.w)?;
        let target = tape.matmul(wh, head.a_target)?;
        let neighbor = tape.matmul(wh, head.a_neighbor)?;
        let scores = tape.edge_scores(g_loops, target, neighbor)?;
        let scores = tape.leaky_relu(scores, ATTENTION_SLOPE);
        let alpha = tape.edge_softmax(g_loops, scores)?;
        coefficients.push(alpha);
        let alpha = tape.dropout(alpha, dropout, training, rng)?;
        outputs.push(tape.edge_aggregate(g_loops, alpha, wh)?);
    }
    Ok((tape.concat_cols(&outputs)?, coefficients))
}

/// Query, key and value projections of one dense attention head.
#[derive(Clone, Copy, Debug)]
pub struct MhaHead {
    pub q: Tensor,
    pub k: Tensor,
    pub v: Tensor,
}

/// Global multi-head self-attention `softmax(QKᵀ/√d_h)·V`; the graph is not
/// consulted. Returns the concatenated output and each head's `n × n`
/// attention matrix.
pub fn dense_mha_propagate(tape: &mut Tape, h: Tensor, heads: &[MhaHead]) -> Result<(Tensor, Vec<Tensor>)> {
    let mut outputs = Vec::with_capacity(heads.len());
    let mut attention = Vec::with_capacity(heads.len());
    for head in heads {
        let q = tape.matmul(h, head.q)?;
        let k = tape.matmul(h, head.k)?;
        let v = tape.matmul(h, head.v)?;
        let kt = tape.transpose(k);
        let scores = tape.matmul(q, kt)?;
        let scores = tape.scale(scores, 1.0 / (q.cols() as f64).sqrt());
        let a = tape.row_softmax(scores, None)?;
        attention.push(a);
        outputs.push(tape.matmul(a, v)?);
    }
    Ok((tape.concat_cols(&outputs)?, attention))
}

/// Parameters owned by one slot of one block.
#[derive(Clone, Debug)]
pub enum SlotParams {
    Transform { w: ParamId },
    Gcn,
    Sage { w_self: ParamId, w_neigh: ParamId },
    Gat { heads: Vec<[ParamId; 3]> },
    Dense { heads: Vec<[ParamId; 3]> },
}

fn head_width(width: usize, heads: usize) -> Result<usize> {
    if heads == 0 || !width.is_multiple_of(heads) {
        return Err(Error::Config(format!("{heads} heads do not divide width {width}")));
    }
    Ok(width / heads)
}

/// Allocates the parameters for a propagation slot of the given kind.
pub fn init_propagator<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    kind: PropagatorKind,
    width: usize,
    heads: usize,
    rng: &mut R,
) -> Result<SlotParams> {
    Ok(match kind {
        PropagatorKind::GcnLike => SlotParams::Gcn,
        PropagatorKind::SageLike => SlotParams::Sage {
            w_self: store.glorot(format!("{prefix}.w_self"), width, width, rng),
            w_neigh: store.glorot(format!("{prefix}.w_neigh"), width, width, rng),
        },
        PropagatorKind::GatLike => {
            let dh = head_width(width, heads)?;
            SlotParams::Gat {
                heads: (0..heads)
                    .map(|k| {
                        [
                            store.glorot(format!("{prefix}.head{k}.w"), width, dh, rng),
                            store.glorot(format!("{prefix}.head{k}.a_target"), dh, 1, rng),
                            store.glorot(format!("{prefix}.head{k}.a_neighbor"), dh, 1, rng),
                        ]
                    })
                    .collect(),
            }
        }
        PropagatorKind::DenseAttention => {
            let dh = head_width(width, heads)?;
            SlotParams::Dense {
                heads: (0..heads)
                    .map(|k| {
                        [
                            store.glorot(format!("{prefix}.head{k}.q"), width, dh, rng),
                            store.glorot(format!("{prefix}.head{k}.k"), width, dh, rng),
                            store.glorot(format!("{prefix}.head{k}.v"), width, dh, rng),
                        ]
                    })
                    .collect(),
            }
        }
    })
}

/// Allocates independent parameters for both slots of a block.
pub fn init_pair<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    pair: [Slot; 2],
    kind: PropagatorKind,
    width: usize,
    heads: usize,
    rng: &mut R,
) -> Result<[SlotParams; 2]> {
    let mut make = |s: usize| match pair[s] {
        Slot::T => Ok(SlotParams::Transform {
            w: store.glorot(format!("{prefix}.slot{s}.w"), width, width, rng),
        }),
        Slot::P => init_propagator(store, &format!("{prefix}.slot{s}"), kind, width, heads, rng),
    };
    Ok([make(0)?, make(1)?])
}

/// Runs one slot. `dropout` applies inside T and to attention coefficients.
pub fn apply_slot<R: Rng + ?Sized>(
    tape: &mut Tape,
    bound: &Bound,
    slot: &SlotParams,
    h: Tensor,
    graph: &GraphContext,
    dropout: f64,
    training: bool,
    rng: &mut R,
) -> Result<Tensor> {
    match slot {
        SlotParams::Transform { w } => transform(tape, h, bound[*w], dropout, training, rng),
        SlotParams::Gcn => gcn_propagate(tape, &graph.gcn, h),
        SlotParams::Sage { w_self, w_neigh } => {
            sage_propagate(tape, &graph.sage_mean, h, bound[*w_self], bound[*w_neigh])
        }
        SlotParams::Gat { heads } => {
            let heads: Vec<GatHead> = heads
                .iter()
                .map(|[w, t, n]| GatHead {
                    w: bound[*w],
                    a_target: bound[*t],
                    a_neighbor: bound[*n],
                })
                .collect();
            Ok(gat_propagate(tape, &graph.gat, h, &heads, dropout, training, rng)?.0)
        }
        SlotParams::Dense { heads } => {
            let heads: Vec<MhaHead> = heads
                .iter()
                .map(|[q, k, v]| MhaHead {
                    q: bound[*q],
                    k: bound[*k],
                    v: bound[*v],
                })
                .collect();
            Ok(dense_mha_propagate(tape, h, &heads)?.0)
        }
    }
}

/// Applies the two slots of a block left to right.
#[allow(clippy::too_many_arguments)]
pub fn apply_operator_pair<R: Rng + ?Sized>(
    tape: &mut Tape,
    bound: &Bound,
    pair: &[SlotParams; 2],
    h: Tensor,
    graph: &GraphContext,
    dropout: f64,
    training: bool,
    rng: &mut R,
) -> Result<Tensor> {
    let mid = apply_slot(tape, bound, &pair[0], h, graph, dropout, training, rng)?;
    apply_slot(tape, bound, &pair[1], mid, graph, dropout, training, rng)
}
