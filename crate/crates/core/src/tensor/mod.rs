//! Dense 2-D tensors with reverse-mode differentiation.
//!
//! Values live on a [`Tape`]; [`Tensor`] is a lightweight handle into it.
//! Operations record themselves as they run and [`Tape::backward`] replays
//! the recording in reverse.

mod matrix;
mod tape;

pub use matrix::Matrix;
pub use tape::{Elementwise, Tape, Tensor, LOG_CLAMP};
#[allow(unused_imports)]
pub(crate) use tape::sigmoid;

/// Generator used for every stochastic step (init, dropout, splits).
pub type SeededRng = rand_chacha::ChaCha8Rng;

#[cfg(test)]
mod tests;
