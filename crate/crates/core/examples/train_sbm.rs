//! Trains the default model on a noisy SBM for three seeds and prints the
//! validation curve of the first one.

use gnnformer::config::{preset, ExperimentConfig};
use gnnformer::training::{run_multi_seed, summary_table, Architecture};

fn main() -> gnnformer::Result<()> {
    let mut config = ExperimentConfig::parse(preset("sbm_depth").expect("bundled preset"), "preset:sbm_depth")?;
    config.train.seeds = vec![0, 1, 2];
    config.train.max_epochs = 60;
    config.validate()?;
    let bundle = config.data.load(&config.train.seeds)?;

    let arch = Architecture::GnnFormer(config.model.clone());
    let run = run_multi_seed(&bundle, &arch, &config.train, 1, "GNNFormer")?;

    let first = &run.seeds[0];
    for stats in first.curve.iter().step_by(10) {
        println!(
            "epoch {:3}  loss {:.4}  train {:.3}  val {:.3}",
            stats.epoch, stats.loss, stats.train_acc, stats.val_acc
        );
    }
    println!("seed {} stopped at best epoch {}\n", first.seed, first.best_epoch);
    print!("{}", summary_table(std::slice::from_ref(&run)));
    Ok(())
}
