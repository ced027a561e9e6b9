//! Knowledge-graph embedding with relation-aware attention graph
//! convolution, filtered link-prediction evaluation and inductive entity
//! matching.

pub mod graph;
pub mod numeric;
pub mod rng;
pub mod model;
pub mod eval;
pub mod train;
pub mod matching;
pub mod synthetic;
