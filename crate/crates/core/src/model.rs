//! GNNFormer and the comparison models.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::io::{read_matrix, write_matrix};
use crate::graph::{CsrGraph, GraphBundle};
use crate::params::{Bound, ParamId, ParamStore};
use crate::propagation::{
    apply_operator_pair, apply_slot, init_pair, init_propagator, GraphContext, OperatorSpec, PropagatorKind, SlotParams,
};
use crate::tensor::{Elementwise, Matrix, SeededRng, Tape, Tensor};

/// Layer-norm epsilon used throughout.
pub const LN_EPS: f64 = 1e-5;

/// Largest graph the dense-attention baseline accepts.
pub const DENSE_ATTENTION_NODE_LIMIT: usize = 5000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FfnKind {
    SwishGlu,
    Geglu,
    Reglu,
    None,
}

impl FfnKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FfnKind::SwishGlu => "swishglu",
            FfnKind::Geglu => "geglu",
            FfnKind::Reglu => "reglu",
            FfnKind::None => "none",
        }
    }

    fn gate(self) -> Option<Elementwise> {
        match self {
            FfnKind::SwishGlu => Some(Elementwise::Swish),
            FfnKind::Geglu => Some(Elementwise::Gelu),
            FfnKind::Reglu => Some(Elementwise::Relu),
            FfnKind::None => None,
        }
    }
}

impl fmt::Display for FfnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FfnKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "swishglu" | "swiglu" => Ok(FfnKind::SwishGlu),
            "geglu" => Ok(FfnKind::Geglu),
            "reglu" => Ok(FfnKind::Reglu),
            "none" => Ok(FfnKind::None),
            _ => Err(Error::Config(format!("unknown ffn {s:?} (swishglu, geglu, reglu, none)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ResidualMode {
    /// Learnable mix with the initial embedding.
    AdaptiveInitial,
    /// Learnable mix with the sub-layer's own input.
    Plain,
    None,
}

impl ResidualMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ResidualMode::AdaptiveInitial => "adaptive_initial",
            ResidualMode::Plain => "plain",
            ResidualMode::None => "none",
        }
    }
}

impl fmt::Display for ResidualMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ResidualMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adaptive_initial" | "aires" => Ok(ResidualMode::AdaptiveInitial),
            "plain" => Ok(ResidualMode::Plain),
            "none" => Ok(ResidualMode::None),
            _ => Err(Error::Config(format!(
                "unknown residual {s:?} (adaptive_initial, plain, none)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub d_prime: usize,
    pub blocks: OperatorSpec,
    pub propagator: PropagatorKind,
    pub ffn: FfnKind,
    pub residual: ResidualMode,
    pub dropout: f64,
    pub heads: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_prime: 64,
            blocks: "TP+TP".parse().expect("literal spec"),
            propagator: PropagatorKind::GcnLike,
            ffn: FfnKind::SwishGlu,
            residual: ResidualMode::AdaptiveInitial,
            dropout: 0.5,
            heads: 4,
        }
    }
}

impl ModelConfig {
    /// Full check, including the 1 to 3 block bound.
    pub fn validate(&self) -> Result<()> {
        self.blocks.check_bounded()?;
        self.validate_unbounded()
    }

    /// Everything except the block bound; the depth diagnostic stacks more.
    pub fn validate_unbounded(&self) -> Result<()> {
        if self.d_prime == 0 {
            return Err(Error::Config("d_prime must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.heads == 0 || !self.d_prime.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "heads {} must divide d_prime {}",
                self.heads, self.d_prime
            )));
        }
        if self.propagator == PropagatorKind::DenseAttention {
            return Err(Error::Config(
                "dense attention is reserved for the Transformer baseline".into(),
            ));
        }
        Ok(())
    }

    /// One `key = value` line per field, using the `model.` config keys.
    pub fn describe(&self) -> String {
        format!(
            "model.d_prime = {}\nmodel.blocks = {}\nmodel.propagator = {}\nmodel.ffn = {}\nmodel.residual = {}\nmodel.dropout = {}\nmodel.heads = {}\n",
            self.d_prime, self.blocks, self.propagator, self.ffn, self.residual, self.dropout, self.heads
        )
    }
}

/// A transductive node classifier over one fixed graph.
pub trait NodeClassifier: Send + Sync {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    /// Row-stochastic `n × C` class probabilities.
    fn forward(&self, tape: &mut Tape, bound: &Bound, training: bool, rng: &mut SeededRng) -> Result<Tensor>;
    /// Text written next to checkpoints.
    fn describe(&self) -> String;

    /// Evaluation-mode probabilities with the current parameters.
    fn predict(&self) -> Result<Matrix> {
        let mut tape = Tape::new();
        let bound = self.params().bind(&mut tape);
        let mut rng = <SeededRng as rand::SeedableRng>::seed_from_u64(0);
        let out = self.forward(&mut tape, &bound, false, &mut rng)?;
        Ok(tape.value(out).clone())
    }
}

fn check_features(features: &Matrix, graph: &CsrGraph) -> Result<()> {
    if features.rows() != graph.n() {
        return Err(Error::Dimension {
            op: "features vs graph",
            left: features.shape(),
            right: (graph.n(), graph.n()),
        });
    }
    Ok(())
}

#[derive(Clone, Debug)]
struct BlockParams {
    pair: [SlotParams; 2],
    alpha: ParamId,
    ln: (ParamId, ParamId),
}

#[derive(Clone, Debug)]
struct FfnParams {
    w1: ParamId,
    w2: ParamId,
    w3: ParamId,
}

/// Initial embedding, residual PT-blocks, gated FFN, topology fusion and a
/// softmax head.
#[derive(Clone, Debug)]
pub struct GnnFormer {
    config: ModelConfig,
    graph: Arc<GraphContext>,
    features: Matrix,
    store: ParamStore,
    w0: ParamId,
    blocks: Vec<BlockParams>,
    ffn: Option<FfnParams>,
    beta: ParamId,
    ffn_ln: (ParamId, ParamId),
    w4: ParamId,
    gamma: ParamId,
    w5: ParamId,
}

impl GnnFormer {
    /// Validates everything but the block bound, so deep stacks are allowed.
    pub fn new<R: Rng + ?Sized>(config: &ModelConfig, bundle: &GraphBundle, rng: &mut R) -> Result<Self> {
        Self::from_parts(config, &bundle.graph, bundle.features.clone(), bundle.num_classes, rng)
    }

    pub fn from_parts<R: Rng + ?Sized>(
        config: &ModelConfig,
        graph: &CsrGraph,
        features: Matrix,
        num_classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate_unbounded()?;
        check_features(&features, graph)?;
        let d = config.d_prime;
        let n = graph.n();
        let mut store = ParamStore::new();
        let w0 = store.glorot("w0", features.cols(), d, rng);
        let mut blocks = Vec::with_capacity(config.blocks.len());
        for (b, &pair) in config.blocks.blocks().iter().enumerate() {
            let prefix = format!("block{b}");
            let pair = init_pair(&mut store, &prefix, pair, config.propagator, d, config.heads, rng)?;
            blocks.push(BlockParams {
                pair,
                alpha: store.logit(format!("{prefix}.alpha")),
                ln: store.layer_norm(&format!("{prefix}.ln"), d),
            });
        }
        let ffn = (config.ffn != FfnKind::None).then(|| FfnParams {
            w1: store.glorot("ffn.w1", d, d, rng),
            w2: store.glorot("ffn.w2", d, d, rng),
            w3: store.glorot("ffn.w3", d, d, rng),
        });
        let beta = store.logit("beta");
        let ffn_ln = store.layer_norm("ffn.ln", d);
        let w4 = store.glorot("w4", n, d, rng);
        let gamma = store.logit("gamma");
        let w5 = store.glorot("w5", d, num_classes, rng);
        Ok(GnnFormer {
            config: config.clone(),
            graph: Arc::new(GraphContext::new(graph)?),
            features,
            store,
            w0,
            blocks,
            ffn,
            beta,
            ffn_ln,
            w4,
            gamma,
            w5,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn graph(&self) -> &GraphContext {
        &self.graph
    }

    fn residual(&self, tape: &mut Tape, logit: Tensor, h0: Tensor, input: Tensor, out: Tensor) -> Result<Tensor> {
        match self.config.residual {
            ResidualMode::AdaptiveInitial => tape.mix(logit, h0, out),
            ResidualMode::Plain => tape.mix(logit, input, out),
            ResidualMode::None => Ok(out),
        }
    }
}

/// `(gate(h·W1) ⊗ h·W2)·W3` with dropout after the gate product.
#[allow(clippy::too_many_arguments)]
pub fn ffn_forward<R: Rng + ?Sized>(
    tape: &mut Tape,
    h: Tensor,
    variant: FfnKind,
    w1: Tensor,
    w2: Tensor,
    w3: Tensor,
    dropout: f64,
    training: bool,
    rng: &mut R,
) -> Result<Tensor> {
    let gate = variant
        .gate()
        .ok_or_else(|| Error::Contract("ffn_forward called with ffn = none".into()))?;
    let a = tape.matmul(h, w1)?;
    let a = tape.elementwise(gate, a, None)?;
    let b = tape.matmul(h, w2)?;
    let g = tape.mul(a, b)?;
    let g = tape.dropout(g, dropout, training, rng)?;
    tape.matmul(g, w3)
}

impl NodeClassifier for GnnFormer {
    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn forward(&self, tape: &mut Tape, bound: &Bound, training: bool, rng: &mut SeededRng) -> Result<Tensor> {
        let rate = self.config.dropout;
        let x = tape.constant(self.features.clone());
        let h0 = tape.matmul(x, bound[self.w0])?;
        let h0 = tape.relu(h0);
        let h0 = tape.dropout(h0, rate, training, rng)?;

        let mut h = h0;
        for block in &self.blocks {
            let f = apply_operator_pair(tape, bound, &block.pair, h, &self.graph, rate, training, rng)?;
            let mixed = self.residual(tape, bound[block.alpha], h0, h, f)?;
            h = tape.layer_norm(mixed, bound[block.ln.0], bound[block.ln.1], LN_EPS)?;
        }

        let z = match &self.ffn {
            Some(p) => ffn_forward(
                tape,
                h,
                self.config.ffn,
                bound[p.w1],
                bound[p.w2],
                bound[p.w3],
                rate,
                training,
                rng,
            )?,
            None => h,
        };
        let mixed = self.residual(tape, bound[self.beta], h0, h, z)?;
        let z = tape.layer_norm(mixed, bound[self.ffn_ln.0], bound[self.ffn_ln.1], LN_EPS)?;

        let topo = tape.spmm(&self.graph.adjacency, bound[self.w4])?;
        let z = tape.mix(bound[self.gamma], z, topo)?;
        let logits = tape.matmul(z, bound[self.w5])?;
        tape.row_softmax(logits, None)
    }

    fn describe(&self) -> String {
        format!("arch = gnnformer\n{}", self.config.describe())
    }
}

#[derive(Clone, Debug)]
struct GtLayer {
    attention: SlotParams,
    ln1: (ParamId, ParamId),
    ffn_in: ParamId,
    ffn_out: ParamId,
    ln2: (ParamId, ParamId),
}

/// Transformer encoder over nodes: input projection, then `layers` rounds of
/// attention and a two-layer ReLU FFN, each with a plain residual and layer
/// norm, then a softmax head. Attention is either global (dense) or
/// restricted to graph neighborhoods.
#[derive(Clone, Debug)]
pub struct TransformerBaseline {
    attention: PropagatorKind,
    d_prime: usize,
    heads: usize,
    dropout: f64,
    graph: Arc<GraphContext>,
    features: Matrix,
    store: ParamStore,
    w_in: ParamId,
    layers: Vec<GtLayer>,
    w_out: ParamId,
}

impl TransformerBaseline {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        attention: PropagatorKind,
        layers: usize,
        d_prime: usize,
        heads: usize,
        dropout: f64,
        bundle: &GraphBundle,
        rng: &mut R,
    ) -> Result<Self> {
        if !matches!(attention, PropagatorKind::DenseAttention | PropagatorKind::GatLike) {
            return Err(Error::Config(format!("baseline attention must be dense or gat, got {attention}")));
        }
        if layers == 0 {
            return Err(Error::Config("baseline needs at least one layer".into()));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Config(format!("dropout {dropout} outside [0, 1)")));
        }
        let n = bundle.num_nodes();
        if attention == PropagatorKind::DenseAttention && n > DENSE_ATTENTION_NODE_LIMIT {
            return Err(Error::Capacity {
                nodes: n,
                limit: DENSE_ATTENTION_NODE_LIMIT,
            });
        }
        let mut store = ParamStore::new();
        let w_in = store.glorot("w_in", bundle.feature_dim(), d_prime, rng);
        let layers = (0..layers)
            .map(|l| {
                Ok(GtLayer {
                    attention: init_propagator(&mut store, &format!("layer{l}.attn"), attention, d_prime, heads, rng)?,
                    ln1: store.layer_norm(&format!("layer{l}.ln1"), d_prime),
                    ffn_in: store.glorot(format!("layer{l}.ffn_in"), d_prime, d_prime, rng),
                    ffn_out: store.glorot(format!("layer{l}.ffn_out"), d_prime, d_prime, rng),
                    ln2: store.layer_norm(&format!("layer{l}.ln2"), d_prime),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let w_out = store.glorot("w_out", d_prime, bundle.num_classes, rng);
        Ok(TransformerBaseline {
            attention,
            d_prime,
            heads,
            dropout,
            graph: Arc::new(GraphContext::new(&bundle.graph)?),
            features: bundle.features.clone(),
            store,
            w_in,
            layers,
            w_out,
        })
    }
}

impl NodeClassifier for TransformerBaseline {
    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn forward(&self, tape: &mut Tape, bound: &Bound, training: bool, rng: &mut SeededRng) -> Result<Tensor> {
        let rate = self.dropout;
        let x = tape.constant(self.features.clone());
        let h = tape.matmul(x, bound[self.w_in])?;
        let mut h = tape.dropout(h, rate, training, rng)?;
        for layer in &self.layers {
            let a = apply_slot(tape, bound, &layer.attention, h, &self.graph, rate, training, rng)?;
            let a = tape.dropout(a, rate, training, rng)?;
            let sum = tape.add(h, a)?;
            h = tape.layer_norm(sum, bound[layer.ln1.0], bound[layer.ln1.1], LN_EPS)?;
            let f = tape.matmul(h, bound[layer.ffn_in])?;
            let f = tape.relu(f);
            let f = tape.dropout(f, rate, training, rng)?;
            let f = tape.matmul(f, bound[layer.ffn_out])?;
            let sum = tape.add(h, f)?;
            h = tape.layer_norm(sum, bound[layer.ln2.0], bound[layer.ln2.1], LN_EPS)?;
        }
        let logits = tape.matmul(h, bound[self.w_out])?;
        tape.row_softmax(logits, None)
    }

    fn describe(&self) -> String {
        format!(
            "arch = transformer\nattention = {}\nlayers = {}\nd_prime = {}\nheads = {}\ndropout = {}\n",
            self.attention,
            self.layers.len(),
            self.d_prime,
            self.heads,
            self.dropout
        )
    }
}

/// Plain GCN stack without residuals or normalization:
/// `H = dropout(ReLU(X·W0))`, then `depth` rounds of
/// `dropout(ReLU(Â·H·W))`, then a softmax head.
#[derive(Clone, Debug)]
pub struct GcnStack {
    dropout: f64,
    graph: Arc<GraphContext>,
    features: Matrix,
    store: ParamStore,
    w0: ParamId,
    layers: Vec<ParamId>,
    w_out: ParamId,
}

impl GcnStack {
    pub fn new<R: Rng + ?Sized>(depth: usize, d_prime: usize, dropout: f64, bundle: &GraphBundle, rng: &mut R) -> Result<Self> {
        if d_prime == 0 {
            return Err(Error::Config("d_prime must be positive".into()));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Config(format!("dropout {dropout} outside [0, 1)")));
        }
        let mut store = ParamStore::new();
        let w0 = store.glorot("w0", bundle.feature_dim(), d_prime, rng);
        let layers = (0..depth)
            .map(|l| store.glorot(format!("layer{l}.w"), d_prime, d_prime, rng))
            .collect();
        let w_out = store.glorot("w_out", d_prime, bundle.num_classes, rng);
        Ok(GcnStack {
            dropout,
            graph: Arc::new(GraphContext::new(&bundle.graph)?),
            features: bundle.features.clone(),
            store,
            w0,
            layers,
            w_out,
        })
    }
}

impl NodeClassifier for GcnStack {
    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn forward(&self, tape: &mut Tape, bound: &Bound, training: bool, rng: &mut SeededRng) -> Result<Tensor> {
        let x = tape.constant(self.features.clone());
        let h = tape.matmul(x, bound[self.w0])?;
        let h = tape.relu(h);
        let mut h = tape.dropout(h, self.dropout, training, rng)?;
        for &w in &self.layers {
            let p = tape.spmm(&self.graph.gcn, h)?;
            let p = tape.matmul(p, bound[w])?;
            let p = tape.relu(p);
            h = tape.dropout(p, self.dropout, training, rng)?;
        }
        let logits = tape.matmul(h, bound[self.w_out])?;
        tape.row_softmax(logits, None)
    }

    fn describe(&self) -> String {
        format!(
            "arch = gcn_stack\ndepth = {}\ndropout = {}\n",
            self.layers.len(),
            self.dropout
        )
    }
}

/// Writes one text matrix per parameter plus a `config` file.
pub fn save_checkpoint(dir: &Path, model: &dyn NodeClassifier) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let config = dir.join("config");
    fs::write(&config, model.describe()).map_err(|e| Error::io(&config, e))?;
    for p in model.params().entries() {
        write_matrix(&dir.join(&p.name), &p.value)?;
    }
    Ok(())
}

/// Loads parameter values saved by [`save_checkpoint`] into `model`,
/// checking every shape.
pub fn load_checkpoint(dir: &Path, model: &mut dyn NodeClassifier) -> Result<()> {
    for p in model.params_mut().entries_mut() {
        p.value = read_matrix(&dir.join(&p.name), Some(p.value.shape()))?;
    }
    Ok(())
}
