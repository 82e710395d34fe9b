//! Converts a heterophily-benchmark `.npz` release into a bundle directory
//! with 10 seeded splits.
//!
//! ```text
//! cargo run --release --example convert_chameleon -- chameleon_filtered.npz data/chameleon_fix
//! ```
//!
//! The second argument defaults to the directory the acceptance suite reads.

use std::path::PathBuf;

use gnnformer::graph::io::chameleon_bundle_dir;
use gnnformer::graph::{convert_npz, edge_homophily, save_bundle};

fn main() {
    let mut args = std::env::args().skip(1);
    let Some(npz) = args.next() else {
        eprintln!("usage: convert_chameleon <archive.npz> [bundle dir]");
        std::process::exit(2);
    };
    let out = args.next().map(PathBuf::from).unwrap_or_else(chameleon_bundle_dir);

    let seeds: Vec<u64> = (0..10).collect();
    let result = convert_npz(&npz, &seeds).and_then(|bundle| {
        save_bundle(&bundle, &out)?;
        Ok(bundle)
    });
    match result {
        Ok(bundle) => println!(
            "{} nodes, {} edges, {} classes, homophily {:.3} -> {}",
            bundle.num_nodes(),
            bundle.graph.undirected_edge_count(),
            bundle.num_classes,
            edge_homophily(&bundle).unwrap_or(f64::NAN),
            out.display()
        ),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}
