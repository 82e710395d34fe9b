//! Sparse graphs, synthetic generation, splits and bundle files.

mod bundle;
mod csr;
pub mod io;
mod sbm;

pub use bundle::{edge_homophily, split_sizes, GraphBundle, Role, Split, TRAIN_FRACTION, VAL_FRACTION};
pub use csr::CsrGraph;
pub use io::{convert_npz, load_bundle, save_bundle};
pub use sbm::{sbm_generate, SbmConfig};
