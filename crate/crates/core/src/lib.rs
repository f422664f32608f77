//! Medication suggestion over a signed drug-interaction graph.
//!
//! The crate is organised as the pipeline runs:
//!
//! * [`numkit`]: tensors, reverse-mode tape, MLPs, Adam.
//! * [`ddigraph`]: drugs, signed interactions, cohorts and their CSV forms.
//! * [`ddigcn`]: drug relation embeddings learned by signed-edge regression.
//! * [`causal`]: clustering, treatment matrices and counterfactual links.
//! * [`mdgcn`]: the patient–drug recommender and top-k suggestion.
//! * [`medsupport`]: truss decomposition, closest truss communities and
//!   suggestion satisfaction.
//! * [`evalmetrics`]: Precision/Recall/NDCG at k.
//! * [`pipeline`]: synthetic data, end-to-end training, baselines, bundles.

// Index loops mirror the matrix notation of the numeric code.
#![allow(clippy::needless_range_loop)]

pub mod causal;
pub mod ddigcn;
pub mod ddigraph;
pub mod error;
pub mod evalmetrics;
pub mod mdgcn;
pub mod medsupport;
pub mod numkit;
pub mod pipeline;
pub mod seed;

pub use error::{Error, Result};
