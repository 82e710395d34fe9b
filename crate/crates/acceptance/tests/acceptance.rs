//! Acceptance suite: one pass/fail line per criterion, nonzero exit if any
//! criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::fs;
use std::time::{Duration, Instant};

use clap::Parser;
use common::*;
use gnnformer::cli::{run, Cli};
use gnnformer::config::{preset, ExperimentConfig};
use gnnformer::graph::io::chameleon_bundle_dir;
use gnnformer::graph::{load_bundle, CsrGraph};
use gnnformer::model::{FfnKind, GnnFormer, ModelConfig, NodeClassifier, ResidualMode};
use gnnformer::propagation::{GraphContext, PropagatorKind};
use gnnformer::tensor::{Matrix, Tape};
use gnnformer::training::{
    ablation_suite, cross_entropy_loss, run_multi_seed, Architecture, ABLATION_LABELS,
};
use rand::Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let bundle = random_bundle(12, 5, 3, 0.3, 42);
    let labels = bundle.labels.clone();
    let mask: Vec<usize> = (0..12).collect();
    let mut worst: (f64, String) = (0.0, String::new());
    let mut combos = 0;
    for spec in ["TP+TP", "PT+PT", "TT+PP", "PP+TT"] {
        for kind in [PropagatorKind::GcnLike, PropagatorKind::SageLike, PropagatorKind::GatLike] {
            for ffn in [FfnKind::SwishGlu, FfnKind::Geglu, FfnKind::Reglu, FfnKind::None] {
                let config = ModelConfig {
                    d_prime: 8,
                    heads: 2,
                    blocks: spec.parse().unwrap(),
                    propagator: kind,
                    ffn,
                    residual: ResidualMode::AdaptiveInitial,
                    dropout: 0.5,
                };
                let mut model = GnnFormer::new(&config, &bundle, &mut rng(combos)).unwrap();
                let err = model_gradcheck(&mut model, &labels, &mask, 1e-6);
                if err > worst.0 {
                    worst = (err, format!("{spec}/{kind}/{ffn}"));
                }
                combos += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    check(
        worst.0 < 1e-3 && elapsed < Duration::from_secs(120),
        format!(
            "{combos} combos, max rel-err {:.2e} ({}), {:.1} s",
            worst.0,
            worst.1,
            elapsed.as_secs_f64()
        ),
    )
}

fn oracle_equivalence() -> Outcome {
    let mut r = rng(7);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n = r.gen_range(1..=64);
        let p = r.gen_range(0.0..0.3);
        let edges = random_edges(n, p, &mut r);
        let ctx = GraphContext::new(&CsrGraph::from_edge_list(n, &edges).unwrap()).unwrap();
        let a = dense_adjacency(n, &edges);
        let op = dense_gcn_operator(&a);
        let h = random_matrix(n, 6, &mut r);
        let w4 = random_matrix(n, 6, &mut r);

        let mut tape = Tape::new();
        let ht = tape.constant(h.clone());
        let once = tape.spmm(&ctx.gcn, ht).unwrap();
        let twice = tape.spmm(&ctx.gcn, once).unwrap();
        let w4t = tape.constant(w4.clone());
        let fused = tape.spmm(&ctx.adjacency, w4t).unwrap();

        let dense_once = op.matmul(&h).unwrap();
        worst = worst
            .max(tape.value(once).max_abs_diff(&dense_once))
            .max(tape.value(twice).max_abs_diff(&op.matmul(&dense_once).unwrap()))
            .max(tape.value(fused).max_abs_diff(&a.matmul(&w4).unwrap()));
    }
    check(worst <= 1e-9, format!("50 graphs, max abs diff {worst:.2e}"))
}

fn permutation_equivariance() -> Outcome {
    let bundle = random_bundle(30, 6, 3, 0.2, 5);
    let mut r = rng(11);
    let mut worst: f64 = 0.0;
    for trial in 0..20 {
        let kind = [PropagatorKind::GcnLike, PropagatorKind::SageLike, PropagatorKind::GatLike][trial % 3];
        let config = ModelConfig {
            d_prime: 8,
            heads: 2,
            blocks: "TP+PP".parse().unwrap(),
            propagator: kind,
            ..ModelConfig::default()
        };
        let model = GnnFormer::new(&config, &bundle, &mut rng(trial as u64)).unwrap();
        let order = permutation(30, &mut r);
        let permuted = permute_bundle(&bundle, &order);
        let mut moved = GnnFormer::new(&config, &permuted, &mut rng(999)).unwrap();
        moved.params_mut().copy_from(model.params()).unwrap();
        let w4 = model.params().by_name("w4").unwrap().select_rows(&order);
        *moved.params_mut().by_name_mut("w4").unwrap() = w4;
        let expect = model.predict().unwrap().select_rows(&order);
        worst = worst.max(moved.predict().unwrap().max_abs_diff(&expect));
    }
    check(worst <= 1e-10, format!("20 permutations, max drift {worst:.2e}"))
}

fn preset_config(name: &str) -> ExperimentConfig {
    let c = ExperimentConfig::parse(preset(name).unwrap(), name).unwrap();
    c.validate().unwrap();
    c
}

fn separable_sbm() -> Outcome {
    let start = Instant::now();
    let c = preset_config("sbm_separable");
    let bundle = c.data.load(&c.train.seeds).map_err(|e| e.to_string())?;
    let run = run_multi_seed(&bundle, &Architecture::GnnFormer(c.model), &c.train, 1, "sbm").map_err(|e| e.to_string())?;
    let perfect = run.seeds.iter().filter(|s| s.test_acc == 1.0).count();
    let elapsed = start.elapsed();
    check(
        perfect >= 9 && elapsed < Duration::from_secs(30),
        format!("{perfect}/10 seeds at test accuracy 1.00, {:.1} s", elapsed.as_secs_f64()),
    )
}

fn chameleon() -> Result<(gnnformer::graph::GraphBundle, ExperimentConfig), String> {
    let dir = chameleon_bundle_dir();
    if !dir.join("meta").exists() {
        return Err(format!(
            "Chameleon-fix bundle not found at {} (convert it with the convert_chameleon example)",
            dir.display()
        ));
    }
    let c = preset_config("chameleon_fix_best");
    let bundle = load_bundle(&dir).map_err(|e| e.to_string())?.ensure_splits(&c.train.seeds);
    if bundle.num_nodes() != 890 || bundle.num_classes != 5 {
        return Err(format!(
            "bundle has n={} C={}, expected n=890 C=5",
            bundle.num_nodes(),
            bundle.num_classes
        ));
    }
    Ok((bundle, c))
}

fn chameleon_reproduction() -> Outcome {
    let (bundle, c) = chameleon()?;
    let start = Instant::now();
    let run = run_multi_seed(&bundle, &Architecture::GnnFormer(c.model), &c.train, 1, "best").map_err(|e| e.to_string())?;
    let (mean, std) = (run.mean().unwrap_or(0.0), run.std().unwrap_or(0.0));
    check(
        run.seeds.len() == 10 && mean >= 0.4298,
        format!(
            "mean {:.2} ± {:.2} over {} seeds (need >= 42.98), {:.0} s",
            100.0 * mean,
            100.0 * std,
            run.seeds.len(),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn chameleon_ablation() -> Outcome {
    let (bundle, c) = chameleon()?;
    let runs = ablation_suite(&bundle, &c.model, &c.train, 1).map_err(|e| e.to_string())?;
    let labels: Vec<&str> = runs.iter().map(|r| r.label.as_str()).collect();
    let complete = runs.iter().all(|r| r.failures.is_empty() && r.seeds.len() == 10);
    let mean = |label: &str| runs.iter().find(|r| r.label == label).and_then(|r| r.mean()).unwrap_or(0.0);
    let (best, no_ffn) = (mean("best"), mean("w/o FFN"));
    check(
        labels == ABLATION_LABELS && complete && best >= no_ffn - 0.01,
        format!(
            "best {:.2} vs w/o FFN {:.2}, w/o AIRes {:.2}, AIRes-Res {:.2}",
            100.0 * best,
            100.0 * no_ffn,
            100.0 * mean("w/o AIRes"),
            100.0 * mean("AIRes-Res")
        ),
    )
}

fn oversmoothing() -> Outcome {
    let c = preset_config("sbm_depth");
    let bundle = c.data.load(&c.train.seeds).map_err(|e| e.to_string())?;
    let homophily = gnnformer::graph::edge_homophily(&bundle).map_err(|e| e.to_string())?;
    let at_depth = |depth: usize| {
        let mut m = c.model.clone();
        m.blocks = m.blocks.repeated(depth).unwrap();
        run_multi_seed(&bundle, &Architecture::GnnFormer(m), &c.train, 1, "d")
            .map(|r| (r.mean().unwrap_or(0.0), r.seeds.len()))
            .map_err(|e| e.to_string())
    };
    let (acc2, n2) = at_depth(2)?;
    let (acc8, n8) = at_depth(8)?;
    let control = Architecture::GcnStack {
        depth: 8,
        d_prime: c.model.d_prime,
        dropout: c.model.dropout,
    };
    let ctrl = run_multi_seed(&bundle, &control, &c.train, 1, "control").map_err(|e| e.to_string())?;
    check(
        n2 == 5 && n8 == 5 && ctrl.seeds.len() == 5 && (acc8 - acc2).abs() <= 0.05,
        format!(
            "homophily {homophily:.2}; depth 2 {:.2}, depth 8 {:.2}, GCN control depth 8 {:.2}",
            100.0 * acc2,
            100.0 * acc8,
            100.0 * ctrl.mean().unwrap_or(0.0)
        ),
    )
}

fn loss_identity() -> Outcome {
    let mut r = rng(8);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = r.gen_range(2..20);
        let c = r.gen_range(2..6);
        let logits = random_matrix(n, c, &mut r).scaled(4.0);
        let labels: Vec<usize> = (0..n).map(|_| r.gen_range(0..c)).collect();
        let mut mask: Vec<usize> = (0..n).filter(|_| r.gen_bool(0.6)).collect();
        if mask.is_empty() {
            mask.push(0);
        }
        let mut tape = Tape::new();
        let x = tape.constant(logits);
        let pred = tape.row_softmax(x, None).unwrap();
        let loss = cross_entropy_loss(&mut tape, pred, &labels, &mask).unwrap();
        // -trace(Y_trainᵀ · log Ŷ_train) with dense one-hot labels
        let y = Matrix::from_fn(mask.len(), c, |k, j| (labels[mask[k]] == j) as u8 as f64);
        let log_pred = tape.value(pred).select_rows(&mask).map(|p| p.max(1e-12).ln());
        let product = y.transpose().matmul(&log_pred).unwrap();
        let trace: f64 = (0..c).map(|j| product.get(j, j)).sum();
        worst = worst.max((tape.value(loss).item() + trace).abs());
    }
    check(worst <= 1e-10, format!("100 instances, max diff {worst:.2e}"))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut digests = Vec::new();
    for command in ["train", "ablate", "depth"] {
        let mut outputs = Vec::new();
        for rerun in 0..2 {
            let out = dir.path().join(format!("{command}{rerun}"));
            let out_arg = out.to_string_lossy().into_owned();
            let cli = Cli::try_parse_from([
                "gnnformer", command, "--config", "preset:sbm_depth", "--seeds", "0,1",
                "--set", "train.max_epochs=8", "--set", "train.patience=8", "--set", "depth.depths=1,3",
                "--out", &out_arg,
            ])
            .map_err(|e| e.to_string())?;
            run(cli, &mut std::io::sink()).map_err(|e| format!("{command}: {e}"))?;
            outputs.push(fs::read(out.join("results.csv")).map_err(|e| e.to_string())?);
        }
        digests.push((command, outputs[0] == outputs[1], outputs[0].len()));
    }
    let all = digests.iter().all(|d| d.1);
    check(
        all,
        digests
            .iter()
            .map(|(c, same, len)| format!("{c}: {} ({len} bytes)", if *same { "identical" } else { "DIFFERENT" }))
            .collect::<Vec<_>>()
            .join(", "),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("gradient suite", gradient_suite),
        ("sparse/dense oracle equivalence", oracle_equivalence),
        ("permutation equivariance", permutation_equivariance),
        ("separable SBM", separable_sbm),
        ("Chameleon-fix reproduction", chameleon_reproduction),
        ("Chameleon-fix ablation direction", chameleon_ablation),
        ("depth stability vs GCN control", oversmoothing),
        ("trace loss identity", loss_identity),
        ("byte-identical reruns", determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("[PASS] {}. {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {}. {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
