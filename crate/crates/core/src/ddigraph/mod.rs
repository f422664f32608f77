//! Drugs, signed drug–drug interactions, patient cohorts and their CSV forms.

mod cohort;
mod graph;

pub use cohort::{load_cohort, Cohort, CohortConfig, Imputation, Split, Standardizer};
pub use graph::{load_ddi_graph, sample_zero_edges, DdiEdge, DdiGraph, Drug, EdgeSign};
