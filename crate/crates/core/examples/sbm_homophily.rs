//! Sample stochastic block models over a range of `p_out` and report the
//! measured edge homophily next to the expected value.

use gnnformer::graph::{edge_homophily, sbm_generate, SbmConfig};
use gnnformer::tensor::SeededRng;
use rand::SeedableRng;

fn main() -> gnnformer::Result<()> {
    println!("{:>8} {:>7} {:>9} {:>9}", "p_out", "edges", "expected", "measured");
    for p_out in [0.0, 0.001, 0.004125, 0.01, 0.02, 0.05] {
        let config = SbmConfig {
            n: 400,
            classes: 4,
            p_in: 0.05,
            p_out,
            feat_dim: 16,
            feat_noise: 1.0,
        };
        let bundle = sbm_generate(&config, &mut SeededRng::seed_from_u64(0))?;
        println!(
            "{p_out:>8} {:>7} {:>9.3} {:>9.3}",
            bundle.graph.undirected_edge_count(),
            config.expected_homophily(),
            edge_homophily(&bundle)?
        );
    }
    Ok(())
}
