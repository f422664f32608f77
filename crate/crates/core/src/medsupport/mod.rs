//! Explanations for a suggested drug set.
//!
//! Trussness measures how deeply an edge is embedded in triangles. The
//! closest truss community around the suggested drugs is the densest
//! connected truss containing them, shrunk towards the query; its signed
//! edges feed the suggestion satisfaction score.

mod ctc;
mod graph;
mod ss;
mod steiner;
mod truss;

pub use ctc::{
    closest_truss_community, default_n0, explain, Community, ExplanationEdge, ExplanationNode, ExplanationSubgraph,
};
pub use graph::{SignedGraph, Subgraph};
pub use ss::{suggestion_satisfaction, SignCounts, SsConfig};
pub use steiner::{steiner_tree, truss_weight, SteinerForest, SteinerTree};
pub use truss::{truss_decomposition, truss_numbers, TrussIndex};
