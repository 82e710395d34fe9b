//! Graph transformer for node classification with decoupled propagation
//! and transformation operators, written on a small reverse-mode autodiff
//! core.
//!
//! The usual path is: build or load a [`graph::GraphBundle`], describe a
//! model with [`model::ModelConfig`], and hand both to
//! [`training::run_multi_seed`].

pub mod cli;
pub mod config;
pub mod error;
pub mod graph;
pub mod model;
pub mod params;
pub mod propagation;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
