use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{EvalConfig, PipelineConfig};
use super::usersim::usersim_rank;
use super::{DRUGS_FILE, EDGES_FILE, PATIENTS_FILE, PRESCRIPTIONS_FILE};
use crate::causal::build_treatment_state;
use crate::ddigcn::train_ddigcn;
use crate::ddigraph::{load_cohort, load_ddi_graph, sample_zero_edges, Cohort, DdiGraph, EdgeSign, Split};
use crate::error::{Error, Result};
use crate::evalmetrics::{MetricTable, RankedSuggestion};
use crate::mdgcn::{rank_logits, train_mdgcn, ModelBundle};
use crate::medsupport::{explain, truss_decomposition, SignedGraph, TrussIndex};

pub const RUN_FORMAT: &str = "medsuggest-run";
pub const BUNDLE_DIR: &str = "bundle";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const BASELINE_METRICS_FILE: &str = "usersim_metrics.csv";

/// Everything needed to repeat a run, plus what it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    /// Configuration with derived stage seeds filled in.
    pub config: PipelineConfig,
    pub root_seed: u64,
    pub stage_seeds: BTreeMap<String, u64>,
    /// SHA-256 of every input file, keyed by file name.
    pub input_hashes: BTreeMap<String, String>,
    pub metrics: MetricTable,
    pub baseline_metrics: MetricTable,
    /// Best validation NDCG at the selection cut-off, if selection ran.
    pub validation_ndcg: Option<f64>,
    pub best_epoch: usize,
    /// Artefact paths relative to the output directory.
    pub artifacts: BTreeMap<String, String>,
    /// SHA-256 of the metric tables, keyed by file name.
    pub artifact_hashes: BTreeMap<String, String>,
    pub started_at: u64,
    pub finished_at: u64,
    pub elapsed_secs: f64,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let m: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if m.format != RUN_FORMAT {
            return Err(Error::Format(format!("not a run manifest: format `{}`", m.format)));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Input file paths inside a data directory.
#[derive(Debug, Clone, PartialEq)]
pub struct DataPaths {
    pub drugs: PathBuf,
    pub edges: PathBuf,
    pub patients: PathBuf,
    pub prescriptions: PathBuf,
}

impl DataPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            drugs: dir.join(DRUGS_FILE),
            edges: dir.join(EDGES_FILE),
            patients: dir.join(PATIENTS_FILE),
            prescriptions: dir.join(PRESCRIPTIONS_FILE),
        }
    }

    fn all(&self) -> [(&'static str, &Path); 4] {
        [
            (DRUGS_FILE, self.drugs.as_path()),
            (EDGES_FILE, self.edges.as_path()),
            (PATIENTS_FILE, self.patients.as_path()),
            (PRESCRIPTIONS_FILE, self.prescriptions.as_path()),
        ]
    }

    pub fn hashes(&self) -> Result<BTreeMap<String, String>> {
        self.all()
            .into_iter()
            .map(|(name, p)| Ok((name.to_string(), sha256_file(p)?)))
            .collect()
    }

    pub fn load(&self, config: &PipelineConfig) -> Result<(DdiGraph, Cohort)> {
        let graph = load_ddi_graph(&self.drugs, &self.edges)?;
        let cohort = load_cohort(&self.patients, &self.prescriptions, graph.num_drugs(), &config.split)?;
        Ok((graph, cohort))
    }
}

/// Ranked drug lists for `rows` from a trained bundle, computed from raw
/// features exactly as the service does.
pub fn bundle_rank(bundle: &ModelBundle, cohort: &Cohort, rows: &[usize], k: usize) -> Result<Vec<RankedSuggestion>> {
    rows.iter()
        .map(|&i| {
            let logits = bundle.logits(cohort.raw.row(i))?;
            Ok(RankedSuggestion::new(
                cohort.patient_ids[i].clone(),
                rank_logits(&logits).into_iter().take(k).collect(),
                cohort.prescriptions[i].iter().copied(),
            ))
        })
        .collect()
}

/// Mean suggestion satisfaction of each patient's top-`k` over its
/// explanation subgraph, for every `k` in `ks`.
pub fn mean_ss(
    lists: &[RankedSuggestion],
    graph: &SignedGraph,
    index: &TrussIndex,
    ks: impl IntoIterator<Item = usize>,
    alpha: f64,
) -> Result<Vec<(usize, f64)>> {
    if lists.is_empty() {
        return Err(Error::Argument("no patients to score".into()));
    }
    ks.into_iter()
        .map(|k| {
            let mut total = 0.0;
            for s in lists {
                let top: Vec<usize> = s.ranked.iter().copied().take(k).collect();
                total += explain(graph, index, &top, alpha)?.ss;
            }
            Ok((k, total / lists.len() as f64))
        })
        .collect()
}

/// Precision, Recall and NDCG at k = 1..=max_k plus SS at
/// k = ss_min_k..=max_k over `lists`.
pub fn metric_table(
    lists: &[RankedSuggestion],
    graph: &SignedGraph,
    index: &TrussIndex,
    eval: &EvalConfig,
) -> Result<MetricTable> {
    let mut table = MetricTable::ranking(lists, 1..=eval.max_k)?;
    for (k, ss) in mean_ss(lists, graph, index, eval.ss_min_k..=eval.max_k, eval.alpha)? {
        table.push("ss", k, ss);
    }
    Ok(table)
}

/// Test-split metrics of a bundle on a cohort.
pub fn evaluate_bundle(
    bundle: &ModelBundle,
    cohort: &Cohort,
    graph: &DdiGraph,
    eval: &EvalConfig,
) -> Result<MetricTable> {
    let test = cohort.indices(Split::Test);
    if test.is_empty() {
        return Err(Error::Argument("test split is empty".into()));
    }
    let k = eval.max_k.min(bundle.num_drugs());
    let lists = bundle_rank(bundle, cohort, &test, k)?;
    let signed = SignedGraph::from_ddi(graph);
    metric_table(&lists, &signed, &truss_decomposition(&signed), eval)
}

/// UserSim metrics on the test split.
pub fn evaluate_baseline(cohort: &Cohort, graph: &DdiGraph, eval: &EvalConfig) -> Result<MetricTable> {
    let test = cohort.indices(Split::Test);
    if test.is_empty() {
        return Err(Error::Argument("test split is empty".into()));
    }
    let lists = usersim_rank(cohort, &test, eval.max_k.min(cohort.num_drugs))?;
    let signed = SignedGraph::from_ddi(graph);
    metric_table(&lists, &signed, &truss_decomposition(&signed), eval)
}

fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

/// Embedding, causal construction, recommender training and evaluation.
/// Writes embeddings, treatment triplets, learning curves, the bundle,
/// metric tables and the manifest into `config.output_dir`.
pub fn run_training_pipeline(config: &PipelineConfig) -> Result<RunManifest> {
    let started_at = unix_now();
    let clock = Instant::now();
    config.validate()?;
    let cfg = config.seeded();
    let seeds = cfg.stage_seeds();
    let out = cfg.output_dir.clone();
    std::fs::create_dir_all(&out)?;

    let paths = DataPaths::in_dir(&cfg.data_dir);
    let input_hashes = paths.hashes().map_err(|e| e.at_stage("ingest"))?;
    let (graph, cohort) = paths.load(&cfg).map_err(|e| e.at_stage("ingest"))?;
    info!(
        "loaded {} drugs, {} signed edges, {} patients",
        graph.num_drugs(),
        graph.edges().len(),
        cohort.num_patients()
    );

    let signed_edges = graph.count(EdgeSign::Synergy) + graph.count(EdgeSign::Antagonism);
    let n = graph.num_drugs();
    let free = n * n.saturating_sub(1) / 2 - signed_edges;
    let zero_count = ((signed_edges as f64 * cfg.zero_edge_ratio).round() as usize).min(free);
    let zero = sample_zero_edges(&graph, zero_count, seeds["zero_edges"]).map_err(|e| e.at_stage("ddigcn"))?;
    let training_graph = graph.with_edges(&zero).map_err(|e| e.at_stage("ddigcn"))?;
    let ddi = train_ddigcn(&training_graph, &cfg.ddigcn).map_err(|e| e.at_stage("ddigcn"))?;
    info!(
        "ddigcn: final loss {:.5}",
        ddi.loss_curve.last().copied().unwrap_or(f64::NAN)
    );
    ddi.embeddings.write_csv(&out.join("embeddings.csv"))?;
    write_rows(
        &out.join("ddigcn_loss.csv"),
        &["epoch", "loss"],
        ddi.loss_curve
            .iter()
            .enumerate()
            .map(|(e, l)| vec![(e + 1).to_string(), l.to_string()]),
    )?;

    let state = build_treatment_state(&cohort, &graph, &cfg.causal).map_err(|e| e.at_stage("causal"))?;
    info!(
        "causal: {} counterfactual links (gamma_p {:.4}, gamma_d {:.4})",
        state.num_matched(),
        state.gamma_p,
        state.gamma_d
    );
    state.write_triplets(&out.join("treatments.csv"), &cohort.patient_ids)?;

    let drug_names: Vec<String> = graph.drugs().iter().map(|d| d.name.clone()).collect();
    let ddi_z = cfg.mdgcn.use_ddi.then_some(&ddi.embeddings.z);
    let mut trained = train_mdgcn(&cohort, &state, &graph.drug_features(), &drug_names, ddi_z, &cfg.mdgcn)
        .map_err(|e| e.at_stage("mdgcn"))?;
    info!("mdgcn: best epoch {}", trained.best_epoch);
    write_rows(
        &out.join("mdgcn_loss.csv"),
        &["epoch", "total", "factual", "counterfactual"],
        (0..trained.total_curve.len()).map(|e| {
            vec![
                (e + 1).to_string(),
                trained.total_curve[e].to_string(),
                trained.factual_curve[e].to_string(),
                trained.counterfactual_curve[e].to_string(),
            ]
        }),
    )?;
    write_rows(
        &out.join("validation.csv"),
        &["epoch", "ndcg"],
        trained
            .validation
            .iter()
            .map(|(e, v)| vec![e.to_string(), v.to_string()]),
    )?;
    let validation_ndcg = trained
        .validation
        .iter()
        .map(|v| v.1)
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));

    let metrics = evaluate_bundle(&trained.bundle, &cohort, &graph, &cfg.eval).map_err(|e| e.at_stage("eval"))?;
    let baseline_metrics = evaluate_baseline(&cohort, &graph, &cfg.eval).map_err(|e| e.at_stage("eval"))?;
    let metrics_csv = metrics.to_csv()?;
    let baseline_csv = baseline_metrics.to_csv()?;
    std::fs::write(out.join(METRICS_FILE), &metrics_csv)?;
    std::fs::write(out.join(BASELINE_METRICS_FILE), &baseline_csv)?;

    trained.bundle.metadata = serde_json::json!({
        "root_seed": cfg.seed,
        "stage_seeds": seeds,
        "input_hashes": input_hashes,
        "backbone": cfg.ddigcn.backbone,
        "best_epoch": trained.best_epoch,
    });
    trained.bundle.save(&out.join(BUNDLE_DIR))?;

    let artifacts: BTreeMap<String, String> = [
        ("bundle", BUNDLE_DIR),
        ("metrics", METRICS_FILE),
        ("baseline_metrics", BASELINE_METRICS_FILE),
        ("embeddings", "embeddings.csv"),
        ("treatments", "treatments.csv"),
        ("ddigcn_loss", "ddigcn_loss.csv"),
        ("mdgcn_loss", "mdgcn_loss.csv"),
        ("validation", "validation.csv"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect();
    let artifact_hashes = BTreeMap::from([
        (METRICS_FILE.to_string(), sha256_hex(metrics_csv.as_bytes())),
        (BASELINE_METRICS_FILE.to_string(), sha256_hex(baseline_csv.as_bytes())),
    ]);
    let manifest = RunManifest {
        format: RUN_FORMAT.into(),
        root_seed: cfg.seed,
        stage_seeds: seeds,
        config: cfg,
        input_hashes,
        metrics,
        baseline_metrics,
        validation_ndcg,
        best_epoch: trained.best_epoch,
        artifacts,
        artifact_hashes,
        started_at,
        finished_at: unix_now(),
        elapsed_secs: clock.elapsed().as_secs_f64(),
    };
    manifest.save(&out.join(MANIFEST_FILE))?;
    info!("run finished in {:.1}s", manifest.elapsed_secs);
    Ok(manifest)
}

/// Repeats a recorded run into `output_dir`, refusing if any input file
/// changed since.
pub fn rerun_manifest(manifest: &RunManifest, output_dir: &Path) -> Result<RunManifest> {
    let current = DataPaths::in_dir(&manifest.config.data_dir).hashes()?;
    if current != manifest.input_hashes {
        let changed: Vec<&String> = current
            .iter()
            .filter(|(k, v)| manifest.input_hashes.get(*k) != Some(*v))
            .map(|(k, _)| k)
            .collect();
        return Err(Error::Argument(format!(
            "input files changed since the recorded run: {changed:?}"
        )));
    }
    let mut config = manifest.config.clone();
    config.output_dir = output_dir.to_path_buf();
    run_training_pipeline(&config)
}
