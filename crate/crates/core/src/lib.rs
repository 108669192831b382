//! Inductive node embeddings by sampling and aggregating neighbourhood
//! features.

pub mod aggregators;
pub mod autodiff;
pub mod baselines;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod graph;
pub mod model;
pub mod probe;
pub mod sampler;
pub mod train;
pub mod verify;

pub use error::{Result, SageError};
