//! Node classification by subgraph classification.
//!
//! Each node is represented by induced subgraphs drawn around it with a
//! random walk with restart; a GIN-based classifier with an ego/alter
//! split then labels the subgraph, and therefore the node. The crate
//! covers the whole pipeline: graph ingestion and synthesis, subgraph
//! sampling, a small reverse-mode autodiff engine, the classifier itself,
//! Adam training with early stopping, evaluation, multi-run aggregation,
//! and seeded random hyperparameter search.

pub mod autodiff;
pub mod config;
pub mod graph;
pub mod model;
pub mod rng;
pub mod sampler;
pub mod train;
