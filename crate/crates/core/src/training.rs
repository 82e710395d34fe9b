//! Loss, optimizer, early-stopped training and the experiment suites.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::GraphBundle;
use crate::model::{FfnKind, GcnStack, GnnFormer, ModelConfig, NodeClassifier, ResidualMode, TransformerBaseline};
use crate::params::ParamStore;
use crate::propagation::PropagatorKind;
use crate::tensor::{Matrix, SeededRng, Tape, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seeds: Vec<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-3,
            weight_decay: 5e-4,
            max_epochs: 500,
            patience: 100,
            seeds: (0..10).collect(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr {} must be positive", self.lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight_decay {} must be >= 0", self.weight_decay)));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be positive".into()));
        }
        if self.patience > self.max_epochs {
            return Err(Error::Config(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        Ok(())
    }
}

/// What to build for each seed.
#[derive(Clone, Debug, PartialEq)]
pub enum Architecture {
    GnnFormer(ModelConfig),
    /// Transformer encoder with dense (vanilla) or neighborhood (variant)
    /// attention.
    Transformer {
        attention: PropagatorKind,
        layers: usize,
        d_prime: usize,
        heads: usize,
        dropout: f64,
    },
    /// Residual-free GCN stack used as the over-smoothing control.
    GcnStack { depth: usize, d_prime: usize, dropout: f64 },
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        match self {
            Architecture::GnnFormer(c) => c.validate_unbounded(),
            Architecture::Transformer {
                attention,
                layers,
                d_prime,
                heads,
                dropout,
            } => {
                if !matches!(attention, PropagatorKind::DenseAttention | PropagatorKind::GatLike) {
                    return Err(Error::Config(format!("baseline attention {attention} must be dense or gat")));
                }
                if *layers == 0 || *d_prime == 0 || *heads == 0 || d_prime % heads != 0 {
                    return Err(Error::Config(format!(
                        "baseline needs layers > 0 and heads {heads} dividing d_prime {d_prime}"
                    )));
                }
                check_rate(*dropout)
            }
            Architecture::GcnStack { d_prime, dropout, .. } => {
                if *d_prime == 0 {
                    return Err(Error::Config("d_prime must be positive".into()));
                }
                check_rate(*dropout)
            }
        }
    }

    pub fn build<R: Rng + ?Sized>(&self, bundle: &GraphBundle, rng: &mut R) -> Result<Box<dyn NodeClassifier>> {
        Ok(match self {
            Architecture::GnnFormer(c) => Box::new(GnnFormer::new(c, bundle, rng)?),
            Architecture::Transformer {
                attention,
                layers,
                d_prime,
                heads,
                dropout,
            } => Box::new(TransformerBaseline::new(
                *attention, *layers, *d_prime, *heads, *dropout, bundle, rng,
            )?),
            Architecture::GcnStack { depth, d_prime, dropout } => {
                Box::new(GcnStack::new(*depth, *d_prime, *dropout, bundle, rng)?)
            }
        })
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(Error::Config(format!("dropout {rate} outside [0, 1)")))
    }
}

/// Summed categorical cross-entropy `Σ_{i∈mask} −ln pred[i, y_i]`, the
/// per-node form of `−trace(Yᵀ log Ŷ)` restricted to `mask`.
pub fn cross_entropy_loss(tape: &mut Tape, pred: Tensor, labels: &[usize], mask: &[usize]) -> Result<Tensor> {
    if mask.is_empty() {
        return Err(Error::DegenerateInput("cross-entropy over an empty node set".into()));
    }
    let targets: Vec<(usize, usize)> = mask.iter().map(|&i| (i, labels[i])).collect();
    tape.nll_sum(pred, &targets)
}

/// Fraction of `nodes` whose arg-max prediction equals the label; 0 when
/// `nodes` is empty.
pub fn accuracy(pred: &Matrix, labels: &[usize], nodes: &[usize]) -> f64 {
    if nodes.is_empty() {
        return 0.0;
    }
    let argmax = pred.argmax_rows();
    let hits = nodes.iter().filter(|&&i| argmax[i] == labels[i]).count();
    hits as f64 / nodes.len() as f64
}

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    lr: f64,
    weight_decay: f64,
    t: i32,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl AdamW {
    pub fn new(params: &ParamStore, lr: f64, weight_decay: f64) -> Self {
        let zeros = || {
            params
                .entries()
                .iter()
                .map(|p| Matrix::zeros(p.value.rows(), p.value.cols()))
                .collect()
        };
        AdamW {
            lr,
            weight_decay,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update. A missing gradient counts as zero. Weight decay touches
    /// only entries flagged `decay`.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Option<Matrix>]) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::Contract(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (p, g) in params.entries().iter().zip(grads) {
            if let Some(g) = g {
                if g.shape() != p.value.shape() {
                    return Err(Error::Contract(format!("gradient shape mismatch for {}", p.name)));
                }
                if !g.is_finite() {
                    return Err(Error::Divergence(format!("non-finite gradient for {}", p.name)));
                }
            }
        }
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        for (k, p) in params.entries_mut().iter_mut().enumerate() {
            if p.decay && self.weight_decay > 0.0 {
                let shrink = 1.0 - self.lr * self.weight_decay;
                p.value.as_mut_slice().iter_mut().for_each(|x| *x *= shrink);
            }
            let m = self.m[k].as_mut_slice();
            let v = self.v[k].as_mut_slice();
            let values = p.value.as_mut_slice();
            let g = grads[k].as_ref().map(Matrix::as_slice);
            for i in 0..values.len() {
                let gi = g.map_or(0.0, |g| g[i]);
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * gi;
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * gi * gi;
                values[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

/// Outcome of one seed. `model` holds the parameters of the best epoch.
pub struct SeedResult {
    pub seed: u64,
    pub test_acc: f64,
    pub best_val_acc: f64,
    pub best_epoch: usize,
    pub curve: Vec<EpochStats>,
    pub model: Box<dyn NodeClassifier>,
}

impl fmt::Debug for SeedResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SeedResult")
            .field("seed", &self.seed)
            .field("test_acc", &self.test_acc)
            .field("best_val_acc", &self.best_val_acc)
            .field("best_epoch", &self.best_epoch)
            .field("epochs", &self.curve.len())
            .finish()
    }
}

/// Trains one model on the split stored for `seed`, selecting the epoch with
/// the highest validation accuracy (earliest on ties) and stopping once
/// `patience` epochs pass without a strict improvement.
pub fn train_one(bundle: &GraphBundle, seed: u64, arch: &Architecture, config: &TrainConfig) -> Result<SeedResult> {
    let split = bundle
        .split(seed)
        .ok_or_else(|| Error::Config(format!("bundle has no split for seed {seed}")))?;
    let (train, val, test) = (split.train(), split.val(), split.test());
    let mut init_rng = SeededRng::seed_from_u64(seed);
    let mut dropout_rng = SeededRng::seed_from_u64(seed);
    dropout_rng.set_stream(1);
    let mut model = arch.build(bundle, &mut init_rng)?;
    let mut optimizer = AdamW::new(model.params(), config.lr, config.weight_decay);

    let mut curve = Vec::new();
    let mut best: Option<(f64, usize, f64, ParamStore)> = None;
    let mut stale = 0;
    for epoch in 0..config.max_epochs {
        let mut tape = Tape::new();
        let bound = model.params().bind(&mut tape);
        let pred = model.forward(&mut tape, &bound, true, &mut dropout_rng)?;
        let loss = cross_entropy_loss(&mut tape, pred, &bundle.labels, &train)?;
        let loss_value = tape.value(loss).item();
        if !loss_value.is_finite() {
            return Err(Error::Divergence(format!("loss {loss_value} at epoch {epoch}")));
        }
        tape.backward(loss)?;
        let grads = bound.grads(&tape);
        drop(tape);
        optimizer.step(model.params_mut(), &grads).map_err(|e| match e {
            Error::Divergence(msg) => Error::Divergence(format!("{msg} at epoch {epoch}")),
            other => other,
        })?;

        let probs = model.predict()?;
        let val_acc = accuracy(&probs, &bundle.labels, &val);
        curve.push(EpochStats {
            epoch,
            loss: loss_value,
            train_acc: accuracy(&probs, &bundle.labels, &train),
            val_acc,
        });
        if best.as_ref().is_none_or(|b| val_acc > b.0) {
            let test_acc = accuracy(&probs, &bundle.labels, &test);
            best = Some((val_acc, epoch, test_acc, model.params().clone()));
            stale = 0;
        } else {
            stale += 1;
        }
        if stale >= config.patience {
            break;
        }
    }
    let (best_val_acc, best_epoch, test_acc, params) = best.expect("at least one epoch ran");
    model.params_mut().copy_from(&params)?;
    log::debug!("seed {seed}: best epoch {best_epoch}, val {best_val_acc:.4}, test {test_acc:.4}");
    Ok(SeedResult {
        seed,
        test_acc,
        best_val_acc,
        best_epoch,
        curve,
        model,
    })
}

/// Mean and sample standard deviation; `None` for an empty list.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, var.sqrt()))
}

/// All seeds of one configuration.
#[derive(Debug)]
pub struct RunResult {
    pub label: String,
    pub depth: Option<usize>,
    pub seeds: Vec<SeedResult>,
    /// Seeds that errored, with the message.
    pub failures: Vec<(u64, String)>,
}

impl RunResult {
    pub fn accuracies(&self) -> Vec<f64> {
        self.seeds.iter().map(|s| s.test_acc).collect()
    }

    pub fn mean(&self) -> Option<f64> {
        mean_std(&self.accuracies()).map(|m| m.0)
    }

    pub fn std(&self) -> Option<f64> {
        mean_std(&self.accuracies()).map(|m| m.1)
    }
}

/// Trains `arch` once per seed of `config`, up to `jobs` seeds at a time.
/// Seeds that fail are recorded and left out of the aggregate.
pub fn run_multi_seed(
    bundle: &GraphBundle,
    arch: &Architecture,
    config: &TrainConfig,
    jobs: usize,
    label: &str,
) -> Result<RunResult> {
    arch.validate()?;
    config.validate()?;
    if let Some(seed) = config.seeds.iter().find(|&&s| bundle.split(s).is_none()) {
        return Err(Error::Config(format!("bundle has no split for seed {seed}")));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let outcomes: Vec<(u64, Result<SeedResult>)> = pool.install(|| {
        config
            .seeds
            .par_iter()
            .map(|&seed| (seed, train_one(bundle, seed, arch, config)))
            .collect()
    });
    let mut result = RunResult {
        label: label.to_string(),
        depth: None,
        seeds: Vec::new(),
        failures: Vec::new(),
    };
    for (seed, outcome) in outcomes {
        match outcome {
            Ok(r) => result.seeds.push(r),
            Err(e) => {
                log::warn!("{label}: seed {seed} failed: {e}");
                result.failures.push((seed, e.to_string()));
            }
        }
    }
    if !result.failures.is_empty() && !result.seeds.is_empty() {
        log::warn!(
            "{label}: aggregating over {} of {} seeds",
            result.seeds.len(),
            config.seeds.len()
        );
    }
    Ok(result)
}

/// Labels of the ablation rows, in output order.
pub const ABLATION_LABELS: [&str; 6] = ["best", "w/o FFN", "FFN(GEGLU)", "FFN(ReGLU)", "w/o AIRes", "AIRes-Res"];

/// The six ablation variants of `base`, paired with their labels.
pub fn ablation_variants(base: &ModelConfig) -> Vec<(&'static str, ModelConfig)> {
    let with = |f: &dyn Fn(&mut ModelConfig)| {
        let mut c = base.clone();
        f(&mut c);
        c
    };
    vec![
        (ABLATION_LABELS[0], base.clone()),
        (ABLATION_LABELS[1], with(&|c| c.ffn = FfnKind::None)),
        (ABLATION_LABELS[2], with(&|c| c.ffn = FfnKind::Geglu)),
        (ABLATION_LABELS[3], with(&|c| c.ffn = FfnKind::Reglu)),
        (ABLATION_LABELS[4], with(&|c| c.residual = ResidualMode::None)),
        (ABLATION_LABELS[5], with(&|c| c.residual = ResidualMode::Plain)),
    ]
}

pub fn ablation_suite(
    bundle: &GraphBundle,
    base: &ModelConfig,
    config: &TrainConfig,
    jobs: usize,
) -> Result<Vec<RunResult>> {
    base.validate()?;
    ablation_variants(base)
        .into_iter()
        .map(|(label, c)| {
            log::info!("ablation: {label}");
            run_multi_seed(bundle, &Architecture::GnnFormer(c), config, jobs, label)
        })
        .collect()
}

pub const DEPTH_SERIES: &str = "GNNFormer";
pub const CONTROL_SERIES: &str = "GCN control";

/// For every depth, GNNFormer with its first block repeated `depth` times
/// and the residual-free GCN stack of the same depth.
pub fn depth_sweep(
    bundle: &GraphBundle,
    base: &ModelConfig,
    depths: &[usize],
    config: &TrainConfig,
    jobs: usize,
) -> Result<Vec<RunResult>> {
    if depths.is_empty() || depths.contains(&0) {
        return Err(Error::Config("depths must be a nonempty list of positive counts".into()));
    }
    base.validate_unbounded()?;
    let mut rows = Vec::with_capacity(2 * depths.len());
    for &depth in depths {
        let mut deep = base.clone();
        deep.blocks = base.blocks.repeated(depth)?;
        let control = Architecture::GcnStack {
            depth,
            d_prime: base.d_prime,
            dropout: base.dropout,
        };
        for (label, arch) in [(DEPTH_SERIES, Architecture::GnnFormer(deep)), (CONTROL_SERIES, control)] {
            log::info!("depth {depth}: {label}");
            let mut run = run_multi_seed(bundle, &arch, config, jobs, label)?;
            run.depth = Some(depth);
            rows.push(run);
        }
    }
    Ok(rows)
}

pub const VANILLA_GT: &str = "vanilla GT";
pub const VARIANT_GT: &str = "variant GT";
pub const GNNFORMER: &str = "GNNFormer";

/// Dense-attention Transformer, neighborhood-attention Transformer and
/// GNNFormer on the same splits. Capacity errors surface as failed seeds.
pub fn baseline_comparison(
    bundle: &GraphBundle,
    model: &ModelConfig,
    layers: usize,
    config: &TrainConfig,
    jobs: usize,
) -> Result<Vec<RunResult>> {
    model.validate()?;
    let transformer = |attention| Architecture::Transformer {
        attention,
        layers,
        d_prime: model.d_prime,
        heads: model.heads,
        dropout: model.dropout,
    };
    [
        (VANILLA_GT, transformer(PropagatorKind::DenseAttention)),
        (VARIANT_GT, transformer(PropagatorKind::GatLike)),
        (GNNFORMER, Architecture::GnnFormer(model.clone())),
    ]
    .into_iter()
    .map(|(label, arch)| {
        log::info!("baseline: {label}");
        run_multi_seed(bundle, &arch, config, jobs, label)
    })
    .collect()
}

fn percent(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{:.2}", 100.0 * v))
}

/// Writes `results.csv`, `curves.csv` and `summary.md` into `dir`.
pub fn write_reports(dir: &Path, runs: &[RunResult]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_err = |path: &Path| {
        let path = path.to_path_buf();
        move |e: csv::Error| Error::io(&path, std::io::Error::other(e))
    };

    let path = dir.join("results.csv");
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    w.write_record(["variant", "depth", "seed", "status", "test_acc", "best_val_acc", "best_epoch", "epochs"])
        .map_err(csv_err(&path))?;
    for run in runs {
        let depth = run.depth.map(|d| d.to_string()).unwrap_or_default();
        for s in &run.seeds {
            w.write_record([
                run.label.clone(),
                depth.clone(),
                s.seed.to_string(),
                "ok".into(),
                format!("{:.6}", s.test_acc),
                format!("{:.6}", s.best_val_acc),
                s.best_epoch.to_string(),
                s.curve.len().to_string(),
            ])
            .map_err(csv_err(&path))?;
        }
        for (seed, msg) in &run.failures {
            w.write_record([
                run.label.clone(),
                depth.clone(),
                seed.to_string(),
                format!("failed: {msg}"),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
            ])
            .map_err(csv_err(&path))?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("curves.csv");
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    w.write_record(["variant", "depth", "seed", "epoch", "loss", "train_acc", "val_acc"])
        .map_err(csv_err(&path))?;
    for run in runs {
        let depth = run.depth.map(|d| d.to_string()).unwrap_or_default();
        for s in &run.seeds {
            for e in &s.curve {
                w.write_record([
                    run.label.clone(),
                    depth.clone(),
                    s.seed.to_string(),
                    e.epoch.to_string(),
                    format!("{:.6}", e.loss),
                    format!("{:.6}", e.train_acc),
                    format!("{:.6}", e.val_acc),
                ])
                .map_err(csv_err(&path))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("summary.md");
    fs::write(&path, summary_table(runs)).map_err(|e| Error::io(&path, e))
}

/// Markdown table of `mean ± std` test accuracy in percent.
pub fn summary_table(runs: &[RunResult]) -> String {
    let with_depth = runs.iter().any(|r| r.depth.is_some());
    let mut out = String::new();
    if with_depth {
        out.push_str("| variant | depth | test accuracy (%) | seeds | failed |\n|---|---|---|---|---|\n");
    } else {
        out.push_str("| variant | test accuracy (%) | seeds | failed |\n|---|---|---|---|\n");
    }
    for run in runs {
        let acc = match (run.mean(), run.std()) {
            (Some(_), _) => format!("{} ± {}", percent(run.mean()), percent(run.std())),
            _ => "n/a".into(),
        };
        let depth = run.depth.map(|d| format!(" {d} |")).unwrap_or_default();
        out.push_str(&format!(
            "| {} |{} {} | {} | {} |\n",
            run.label,
            depth,
            acc,
            run.seeds.len(),
            run.failures.len()
        ));
    }
    out
}
