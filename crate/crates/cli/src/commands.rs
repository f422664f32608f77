//! Subcommand implementations, kept separate from argument parsing so they
//! can be driven from tests.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use medsuggest_core::mdgcn::{ModelBundle, Suggestion};
use medsuggest_core::pipeline::{
    evaluate_bundle, generate_synthetic_cohort, rerun_manifest, run_training_pipeline, DataPaths, ExplainRequest,
    PipelineConfig, RunManifest, Snapshot, BUNDLE_DIR, CONFIG_ENV, MANIFEST_FILE,
};

use crate::http::{self, AppState, SnapshotSource};

#[derive(Debug, Parser)]
#[command(
    name = "medsuggest",
    version,
    about = "Interaction-aware medication suggestion with explanations"
)]
pub struct Cli {
    /// TOML configuration file; defaults apply when absent.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic cohort and interaction graph to the data directory.
    GenSynth {
        /// Output directory (default: config `data_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Generator seed (default: config `synth.seed`).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train embeddings and recommender, evaluate, and write a run directory.
    Train {
        /// Skip fusing interaction embeddings into the recommender.
        #[arg(long)]
        no_ddi: bool,
        /// Weight of the counterfactual loss term.
        #[arg(long)]
        delta: Option<f64>,
        /// Repeat the run recorded in this manifest instead of using the config.
        #[arg(long, conflicts_with_all = ["no_ddi", "delta"])]
        manifest: Option<PathBuf>,
        /// Run directory (default: config `output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a trained bundle on the test split and print the metric table.
    Eval {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Rank drugs for each patient in a CSV file (`id,<feature columns>`).
    Suggest {
        #[arg(long)]
        patient_file: PathBuf,
        #[arg(long, default_value_t = 4)]
        k: usize,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Print the explanation subgraph for a drug set as JSON.
    Explain {
        /// Comma-separated drug ids or names.
        #[arg(long, value_delimiter = ',', required = true)]
        drugs: Vec<String>,
        #[arg(long)]
        alpha: Option<f64>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Print the effective configuration as TOML.
    PrintConfig,
    /// Serve the JSON API.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        host: Option<String>,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Run directory holding the bundle (default: config `output_dir`).
    #[arg(long)]
    pub run: Option<PathBuf>,
}

impl RunArgs {
    fn bundle_dir(&self, config: &PipelineConfig) -> PathBuf {
        self.run.as_deref().unwrap_or(&config.output_dir).join(BUNDLE_DIR)
    }

    fn snapshot(&self, config: &PipelineConfig) -> anyhow::Result<Snapshot> {
        let dir = self.bundle_dir(config);
        Snapshot::load(&dir, &config.data_dir, config.eval.alpha)
            .with_context(|| format!("loading model from {}", dir.display()))
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let config = PipelineConfig::resolve(cli.config.as_deref())?;
    match cli.command {
        Command::PrintConfig => {
            print!("{}", config.to_toml_string()?);
            Ok(())
        }
        Command::GenSynth { out, seed } => gen_synth(&config, out, seed),
        Command::Train {
            no_ddi,
            delta,
            manifest,
            out,
        } => train(config, no_ddi, delta, manifest, out),
        Command::Eval { run } => {
            let bundle = ModelBundle::load(&run.bundle_dir(&config))?;
            let seeded = config.seeded();
            let (graph, cohort) = DataPaths::in_dir(&config.data_dir).load(&seeded)?;
            print!("{}", evaluate_bundle(&bundle, &cohort, &graph, &config.eval)?.to_csv()?);
            Ok(())
        }
        Command::Suggest { patient_file, k, run } => {
            let bundle = ModelBundle::load(&run.bundle_dir(&config))?;
            for (id, ranked) in suggest_file(&bundle, &patient_file, k)? {
                println!("{}", serde_json::json!({ "id": id, "drugs": ranked }));
            }
            Ok(())
        }
        Command::Explain { drugs, alpha, run } => {
            let snap = run.snapshot(&config)?;
            let drug_ids = resolve_drugs(&snap, &drugs)?;
            let e = snap.explain(&ExplainRequest { drug_ids, alpha })?;
            println!("{}", serde_json::to_string_pretty(&e)?);
            Ok(())
        }
        Command::Serve { port, host, run } => {
            let source = SnapshotSource {
                bundle_dir: run.bundle_dir(&config),
                data_dir: config.data_dir.clone(),
                alpha: config.eval.alpha,
            };
            let snapshot = source
                .load()
                .with_context(|| format!("loading model from {}", source.bundle_dir.display()))?;
            let state = AppState::new(snapshot, Some(source));
            let host = host.unwrap_or(config.serve.host.clone());
            let port = port.unwrap_or(config.serve.port);
            tokio::runtime::Runtime::new()?.block_on(http::serve(state, &host, port))
        }
    }
}

fn gen_synth(config: &PipelineConfig, out: Option<PathBuf>, seed: Option<u64>) -> anyhow::Result<()> {
    let mut synth = config.synth.clone();
    if let Some(s) = seed {
        synth.seed = s;
    }
    let dir = out.unwrap_or_else(|| config.data_dir.clone());
    let cohort = generate_synthetic_cohort(&synth)?;
    cohort.write(&dir)?;
    println!(
        "wrote {} patients, {} drugs, {} interaction edges to {}",
        cohort.cohort.num_patients(),
        cohort.graph.num_drugs(),
        cohort.graph.edges().len(),
        dir.display()
    );
    Ok(())
}

fn train(
    mut config: PipelineConfig,
    no_ddi: bool,
    delta: Option<f64>,
    manifest: Option<PathBuf>,
    out: Option<PathBuf>,
) -> anyhow::Result<()> {
    let m = match manifest {
        Some(path) => {
            let recorded = RunManifest::load(&path)?;
            let out = out.unwrap_or_else(|| recorded.config.output_dir.clone());
            rerun_manifest(&recorded, &out)?
        }
        None => {
            if no_ddi {
                config.mdgcn.use_ddi = false;
            }
            if let Some(d) = delta {
                config.mdgcn.delta = d;
            }
            if let Some(o) = out {
                config.output_dir = o;
            }
            run_training_pipeline(&config)?
        }
    };
    print!("{}", m.metrics.to_csv()?);
    println!(
        "run written to {} in {:.1}s; manifest {}",
        m.config.output_dir.display(),
        m.elapsed_secs,
        m.config.output_dir.join(MANIFEST_FILE).display()
    );
    Ok(())
}

/// Reads `id,<features>` rows; columns are matched to the model's features
/// by name, absent columns and empty cells are missing values.
pub fn suggest_file(bundle: &ModelBundle, path: &Path, k: usize) -> anyhow::Result<Vec<(String, Vec<Suggestion>)>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let header = rdr.headers()?.clone();
    let mut columns = Vec::new();
    for (c, name) in header.iter().enumerate().skip(1) {
        match bundle.feature_names.iter().position(|f| f == name) {
            Some(j) => columns.push((c, j)),
            None => bail!("{}: unknown feature column {name:?}", path.display()),
        }
    }
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let mut raw = vec![f64::NAN; bundle.feature_dim()];
        for &(c, j) in &columns {
            let cell = rec.get(c).unwrap_or("").trim();
            if !cell.is_empty() {
                raw[j] = cell
                    .parse()
                    .with_context(|| format!("{}:{}: column {}: not a number", path.display(), row + 2, &header[c]))?;
            }
        }
        let id = rec.get(0).unwrap_or("").to_string();
        out.push((id, bundle.suggest(&raw, k)?));
    }
    Ok(out)
}

/// Accepts numeric ids or drug names.
pub fn resolve_drugs(snap: &Snapshot, drugs: &[String]) -> anyhow::Result<Vec<usize>> {
    let catalog = snap.drugs();
    drugs
        .iter()
        .map(|d| {
            let d = d.trim();
            d.parse::<usize>()
                .ok()
                .or_else(|| catalog.iter().find(|c| c.name == d).map(|c| c.id))
                .with_context(|| format!("unknown drug {d:?}"))
        })
        .collect()
}
