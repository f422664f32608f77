use std::path::Path;

use medsuggest_core::pipeline::{generate_synthetic_cohort, run_training_pipeline, PipelineConfig, SynthConfig};

/// Small cohort: two groups of four drugs, fully synergistic within groups.
pub fn tiny_config(dir: &Path) -> PipelineConfig {
    let synth = SynthConfig {
        groups: 2,
        patients_per_group: 12,
        drugs_per_group: 4,
        num_drugs: 8,
        patient_dim: 3,
        drug_dim: 3,
        core_drugs: 2,
        synergy_density: 1.0,
        antagonism_density: 0.3,
        ..SynthConfig::default()
    };
    let mut c = PipelineConfig {
        data_dir: dir.join("data"),
        output_dir: dir.join("run"),
        synth,
        ..PipelineConfig::default()
    };
    c.ddigcn.epochs = 10;
    c.ddigcn.dim = 8;
    c.mdgcn.hidden = 8;
    c.mdgcn.epochs = 10;
    c.causal.k = 2;
    c.eval.max_k = 3;
    c
}

#[allow(dead_code)]
pub fn trained(dir: &Path) -> PipelineConfig {
    let c = tiny_config(dir);
    generate_synthetic_cohort(&c.synth).unwrap().write(&c.data_dir).unwrap();
    run_training_pipeline(&c).unwrap();
    c
}
