//! Shared fixtures for the benchmarks.

use medsuggest_core::pipeline::{generate_synthetic_cohort, SynthConfig, SyntheticCohort};

/// The default synthetic instance: 5 groups, 200 patients, 40 drugs.
pub fn default_instance() -> SyntheticCohort {
    generate_synthetic_cohort(&SynthConfig::default()).expect("default synthetic config is valid")
}
