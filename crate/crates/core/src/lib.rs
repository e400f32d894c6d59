pub mod checks;
pub mod config;
pub mod error;
pub mod eval;
pub mod model;
pub mod graph;
pub mod negsample;
pub mod nn;
pub mod propagation;
pub mod rng;

pub use error::{Error, Result};
pub use graph::{CsrGraph, EdgeSplit, FeatureMatrix, Matrix};
pub use negsample::{NegativeGraphSet, SamplerMode};
pub use propagation::{EmbeddingState, EnergyOperators, PropagationConfig};
