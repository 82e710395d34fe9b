//! Stacks 1, 2, 4 and 8 blocks and compares against a plain GCN stack of
//! the same depth. Reports land in `target/depth_sweep/`.

use std::path::Path;

use gnnformer::config::{preset, ExperimentConfig};
use gnnformer::training::{depth_sweep, summary_table, write_reports};

fn main() -> gnnformer::Result<()> {
    let mut config = ExperimentConfig::parse(preset("sbm_depth").expect("bundled preset"), "preset:sbm_depth")?;
    config.train.seeds = vec![0, 1];
    config.train.max_epochs = 80;
    let bundle = config.data.load(&config.train.seeds)?;

    let runs = depth_sweep(&bundle, &config.model, &[1, 2, 4, 8], &config.train, 2)?;
    write_reports(Path::new("target/depth_sweep"), &runs)?;
    print!("{}", summary_table(&runs));
    Ok(())
}
