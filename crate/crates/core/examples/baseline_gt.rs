//! Dense-attention Transformer, neighborhood-attention Transformer and
//! GNNFormer on the same SBM.

use gnnformer::config::{preset, ExperimentConfig};
use gnnformer::training::{baseline_comparison, summary_table};

fn main() -> gnnformer::Result<()> {
    let mut config = ExperimentConfig::parse(preset("sbm_depth").expect("bundled preset"), "preset:sbm_depth")?;
    config.train.seeds = vec![0, 1];
    config.train.max_epochs = 60;
    let bundle = config.data.load(&config.train.seeds)?;

    let runs = baseline_comparison(&bundle, &config.model, 1, &config.train, 1)?;
    print!("{}", summary_table(&runs));
    Ok(())
}
