//! Six-row component ablation on a small SBM.

use gnnformer::graph::{sbm_generate, SbmConfig};
use gnnformer::model::ModelConfig;
use gnnformer::tensor::SeededRng;
use gnnformer::training::{ablation_suite, summary_table, TrainConfig};
use rand::SeedableRng;

fn main() -> gnnformer::Result<()> {
    let sbm = SbmConfig {
        n: 200,
        classes: 4,
        p_in: 0.08,
        p_out: 0.01,
        feat_dim: 16,
        feat_noise: 1.5,
    };
    let train = TrainConfig {
        max_epochs: 80,
        patience: 30,
        seeds: vec![0, 1, 2],
        ..TrainConfig::default()
    };
    let bundle = sbm_generate(&sbm, &mut SeededRng::seed_from_u64(11))?.make_splits(&train.seeds)?;
    let base = ModelConfig {
        d_prime: 32,
        ..ModelConfig::default()
    };
    let runs = ablation_suite(&bundle, &base, &train, 1)?;
    print!("{}", summary_table(&runs));
    Ok(())
}
