//! End-to-end run on the default synthetic cohort with shortened training.
//! Usage: synthetic_run [seed] [--no-ddi] [--delta D] [--gin] [--offset X] [--core N]

use medsuggest_core::causal::build_treatment_state;
use medsuggest_core::ddigcn::Backbone;
use medsuggest_core::pipeline::{
    generate_synthetic_cohort, run_training_pipeline, DataPaths, PipelineConfig, SynthConfig,
};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seed = args.first().and_then(|s| s.parse().ok()).unwrap_or(0u64);
    let dir = tempfile::tempdir()?;
    let mut synth = SynthConfig {
        seed,
        ..SynthConfig::default()
    };
    if let Some(i) = args.iter().position(|a| a == "--offset") {
        synth.feature_offset = args[i + 1].parse()?;
    }
    if let Some(i) = args.iter().position(|a| a == "--core") {
        synth.core_drugs = args[i + 1].parse()?;
    }
    generate_synthetic_cohort(&synth)?.write(&dir.path().join("data"))?;
    let mut cfg = PipelineConfig {
        seed,
        data_dir: dir.path().join("data"),
        output_dir: dir.path().join("run"),
        synth,
        ..PipelineConfig::default()
    };
    cfg.ddigcn.epochs = 100;
    cfg.mdgcn.epochs = 200;
    if args.iter().any(|a| a == "--no-ddi") {
        cfg.mdgcn.use_ddi = false;
    }
    if args.iter().any(|a| a == "--gin") {
        cfg.ddigcn.backbone = Backbone::Gin;
    }
    if let Some(i) = args.iter().position(|a| a == "--delta") {
        cfg.mdgcn.delta = args[i + 1].parse()?;
    }
    let m = run_training_pipeline(&cfg)?;
    let seeded = cfg.seeded();
    let (graph, cohort) = DataPaths::in_dir(&cfg.data_dir).load(&seeded)?;
    let state = build_treatment_state(&cohort, &graph, &seeded.causal)?;
    println!("counterfactual matches {}", state.num_matched());
    println!(
        "elapsed {:.1}s best_epoch {} val_ndcg {:?}",
        m.elapsed_secs, m.best_epoch, m.validation_ndcg
    );
    for k in 1..=6 {
        println!(
            "k={k} recall {:.4} ndcg {:.4} ss {:?} | usersim recall {:.4} usersim_ss {:?}",
            m.metrics.get("recall", k).unwrap_or(f64::NAN),
            m.metrics.get("ndcg", k).unwrap_or(f64::NAN),
            m.metrics.get("ss", k),
            m.baseline_metrics.get("recall", k).unwrap_or(f64::NAN),
            m.baseline_metrics.get("ss", k),
        );
    }
    Ok(())
}
