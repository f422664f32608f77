//! Orchestration: synthetic cohorts, end-to-end training and evaluation,
//! the similarity baseline, run manifests and the request handlers behind
//! the HTTP service.

mod config;
mod run;
mod service;
mod synth;
mod usersim;

pub use config::{EvalConfig, PipelineConfig, ServeConfig, CONFIG_ENV};
pub use run::{
    bundle_rank, evaluate_baseline, evaluate_bundle, mean_ss, metric_table, rerun_manifest, run_training_pipeline,
    sha256_file, sha256_hex, DataPaths, RunManifest, BASELINE_METRICS_FILE, BUNDLE_DIR, MANIFEST_FILE, METRICS_FILE,
    RUN_FORMAT,
};
pub use service::{
    DrugInfo, ExplainRequest, FeatureSchema, Snapshot, SsRequest, SsResponse, SuggestRequest, SuggestResponse,
};
pub use synth::{adjusted_rand_index, generate_synthetic_cohort, PlantedTruth, SynthConfig, SyntheticCohort};
pub use usersim::{baseline_features, usersim_baseline, usersim_rank};

pub const DRUGS_FILE: &str = "drugs.csv";
pub const EDGES_FILE: &str = "ddi_edges.csv";
pub const PATIENTS_FILE: &str = "patients.csv";
pub const PRESCRIPTIONS_FILE: &str = "prescriptions.csv";
pub const GROUPS_FILE: &str = "groups.csv";
