//! Patient–drug bipartite recommender.
//!
//! Patients and drugs are embedded by one fully connected layer each, drug
//! embeddings are smoothed over the training bipartite graph with symmetric
//! degree normalisation (no transforms between hops), hop outputs are mixed
//! with weights `1/(t+2)`, and the DDI relation embedding is added. A pair is
//! scored from the Hadamard product of the (unpropagated) patient embedding
//! and the drug representation, concatenated with the treatment indicator.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::causal::{BinaryMatrix, TreatmentState};
use crate::ddigraph::{Cohort, Split, Standardizer};
use crate::error::{Error, Result};
use crate::evalmetrics::{ndcg_at_k, RankedSuggestion};
use crate::numkit::{stable_sigmoid, Activation, AdamState, Checkpoint, Mlp, ParamStore, RowMix, Tape, Tensor, Var};
use crate::seed::stage_rng;

pub const BUNDLE_FORMAT: &str = "medsuggest-bundle";
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MdgcnConfig {
    pub hidden: usize,
    /// Number of propagation hops.
    pub layers: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Weight of the counterfactual loss.
    pub delta: f64,
    pub leaky_slope: f64,
    /// Fuse DDI relation embeddings into drug representations.
    pub use_ddi: bool,
    /// Validation NDCG is checked every this many epochs (0 disables selection).
    pub eval_every: usize,
    pub select_k: usize,
    pub seed: u64,
}

impl Default for MdgcnConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            layers: 2,
            epochs: 1000,
            lr: 0.01,
            delta: 1.0,
            leaky_slope: 0.01,
            use_ddi: true,
            eval_every: 10,
            select_k: 6,
            seed: 0,
        }
    }
}

/// `β_t = 1/(t+2)` for `t = 0..=layers`.
pub fn layer_weights(layers: usize) -> Vec<f64> {
    (0..=layers).map(|t| 1.0 / (t as f64 + 2.0)).collect()
}

/// Training links as adjacency lists plus the normalised propagation
/// operators in both directions.
#[derive(Debug, Clone)]
pub struct BipartiteGraph {
    pub patient_drugs: Vec<Vec<usize>>,
    pub drug_patients: Vec<Vec<usize>>,
    to_patients: Arc<RowMix>,
    to_drugs: Arc<RowMix>,
}

impl BipartiteGraph {
    pub fn new(num_patients: usize, num_drugs: usize, links: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut patient_drugs: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); num_patients];
        for (i, v) in links {
            patient_drugs[i].insert(v);
        }
        let patient_drugs: Vec<Vec<usize>> = patient_drugs.into_iter().map(|s| s.into_iter().collect()).collect();
        let mut drug_patients = vec![Vec::new(); num_drugs];
        for (i, ds) in patient_drugs.iter().enumerate() {
            for &v in ds {
                drug_patients[v].push(i);
            }
        }
        let coef = |a: usize, b: usize| 1.0 / ((a * b) as f64).sqrt();
        let to_patients = RowMix::from_rows(
            num_drugs,
            patient_drugs
                .iter()
                .map(|ds| {
                    ds.iter()
                        .map(|&v| (v, coef(ds.len(), drug_patients[v].len())))
                        .collect()
                })
                .collect(),
        );
        let to_drugs = RowMix::from_rows(
            num_patients,
            drug_patients
                .iter()
                .map(|ps| {
                    ps.iter()
                        .map(|&i| (i, coef(ps.len(), patient_drugs[i].len())))
                        .collect()
                })
                .collect(),
        );
        Self {
            patient_drugs,
            drug_patients,
            to_patients: Arc::new(to_patients),
            to_drugs: Arc::new(to_drugs),
        }
    }

    pub fn from_matrix(links: &BinaryMatrix) -> Self {
        Self::new(links.rows(), links.cols(), links.ones())
    }

    pub fn num_patients(&self) -> usize {
        self.patient_drugs.len()
    }

    pub fn num_drugs(&self) -> usize {
        self.drug_patients.len()
    }
}

/// Encoder and decoder parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mdgcn {
    pub store: ParamStore,
    pub patient_encoder: Mlp,
    pub drug_encoder: Mlp,
    pub decoder: Mlp,
    pub beta: Vec<f64>,
    pub hidden: usize,
}

fn encoder(store: &mut ParamStore, name: &str, d_in: usize, hidden: usize, slope: f64, rng: &mut impl Rng) -> Mlp {
    let mut m = Mlp::new(store, name, &[d_in, hidden], Activation::LeakyRelu(slope), false, rng);
    m.activate_output = true;
    m
}

impl Mdgcn {
    pub fn new(patient_dim: usize, drug_dim: usize, config: &MdgcnConfig, rng: &mut impl Rng) -> Self {
        let mut store = ParamStore::new();
        let h = config.hidden;
        let patient_encoder = encoder(&mut store, "enc.patient", patient_dim, h, config.leaky_slope, rng);
        let drug_encoder = encoder(&mut store, "enc.drug", drug_dim, h, config.leaky_slope, rng);
        let decoder = Mlp::new(&mut store, "dec", &[h + 1, h, 1], Activation::Relu, false, rng);
        Self {
            store,
            patient_encoder,
            drug_encoder,
            decoder,
            beta: layer_weights(config.layers),
            hidden: h,
        }
    }

    /// Patient embeddings (unpropagated) and final drug representations.
    pub fn represent(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        x: Var,
        z: Var,
        graph: &BipartiteGraph,
        ddi: Option<Var>,
    ) -> Result<(Var, Var)> {
        let (hp0, _) = self.patient_encoder.forward(tape, vars, x, false)?;
        let (hd0, _) = self.drug_encoder.forward(tape, vars, z, false)?;
        if tape.value(hp0).rows() != graph.num_patients() || tape.value(hd0).rows() != graph.num_drugs() {
            return Err(Error::Shape("bipartite graph size differs from feature rows".into()));
        }
        let mut combined = tape.scale(hd0, self.beta[0]);
        let (mut hp, mut hd) = (hp0, hd0);
        for &b in &self.beta[1..] {
            let next_p = tape.mix(graph.to_patients.clone(), hd)?;
            let next_d = tape.mix(graph.to_drugs.clone(), hp)?;
            hp = next_p;
            hd = next_d;
            let term = tape.scale(hd, b);
            combined = tape.add(combined, term)?;
        }
        if let Some(z_ddi) = ddi {
            combined = tape.add(combined, z_ddi)?;
        }
        Ok((hp0, combined))
    }

    /// Logits for `(patients[k], drugs[k])` with treatment indicators `t`.
    #[allow(clippy::too_many_arguments)]
    pub fn decode(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        hp: Var,
        hd: Var,
        patients: &[usize],
        drugs: &[usize],
        t: &[f64],
    ) -> Result<Var> {
        let a = tape.gather_rows(hp, patients.to_vec())?;
        let b = tape.gather_rows(hd, drugs.to_vec())?;
        let prod = tape.mul(a, b)?;
        self.decode_product(tape, vars, prod, t)
    }

    fn decode_product(&self, tape: &mut Tape, vars: &[Var], prod: Var, t: &[f64]) -> Result<Var> {
        let tcol = tape.constant(Tensor::column(t.to_vec()));
        let input = tape.concat_cols(&[prod, tcol])?;
        Ok(self.decoder.forward(tape, vars, input, false)?.0)
    }

    /// Combined factual and counterfactual loss on a fixed set of pairs.
    pub fn loss(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        inputs: &MdgcnInputs,
        batch: &PairBatch,
        delta: f64,
    ) -> Result<LossParts> {
        let x = tape.constant(inputs.x.clone());
        let z = tape.constant(inputs.z.clone());
        let ddi = inputs.ddi.as_ref().map(|d| tape.constant(d.clone()));
        let (hp, hd) = self.represent(tape, vars, x, z, &inputs.graph, ddi)?;
        let a = tape.gather_rows(hp, batch.patients.clone())?;
        let b = tape.gather_rows(hd, batch.drugs.clone())?;
        let prod = tape.mul(a, b)?;
        let logits = self.decode_product(tape, vars, prod, &batch.t)?;
        let factual = tape.bce_with_logits(logits, Tensor::column(batch.y.clone()))?;
        if delta == 0.0 {
            return Ok(LossParts {
                total: factual,
                factual,
                counterfactual: None,
            });
        }
        let cf_logits = self.decode_product(tape, vars, prod, &batch.t_cf)?;
        let cf = tape.bce_with_logits(cf_logits, Tensor::column(batch.y_cf.clone()))?;
        let weighted = tape.scale(cf, delta);
        Ok(LossParts {
            total: tape.add(factual, weighted)?,
            factual,
            counterfactual: Some(cf),
        })
    }

    /// Final drug representations in plain tensors.
    pub fn drug_representations(&self, inputs: &MdgcnInputs) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.store.bind_constant(&mut tape);
        let x = tape.constant(inputs.x.clone());
        let z = tape.constant(inputs.z.clone());
        let ddi = inputs.ddi.as_ref().map(|d| tape.constant(d.clone()));
        let (_, hd) = self.represent(&mut tape, &vars, x, z, &inputs.graph, ddi)?;
        Ok(tape.value(hd).clone())
    }

    pub fn encode_patients(&self, x: &Tensor) -> Result<Tensor> {
        self.patient_encoder.eval(&self.store, x)
    }

    /// Logit of every drug for one encoded patient and its treatment row.
    pub fn drug_logits(&self, h_patient: &[f64], drug_repr: &Tensor, treatment: &[bool]) -> Result<Vec<f64>> {
        let nd = drug_repr.rows();
        if treatment.len() != nd || h_patient.len() != drug_repr.cols() {
            return Err(Error::Shape(
                "patient embedding or treatment row does not match drugs".into(),
            ));
        }
        let mut input = Tensor::zeros(nd, self.hidden + 1);
        for v in 0..nd {
            let row = input.row_mut(v);
            for (k, (a, b)) in h_patient.iter().zip(drug_repr.row(v)).enumerate() {
                row[k] = a * b;
            }
            row[self.hidden] = f64::from(u8::from(treatment[v]));
        }
        Ok(self.decoder.eval(&self.store, &input)?.into_data())
    }
}

/// Fixed inputs to the recommender: standardised patient features, drug
/// features, optional DDI embeddings and the training graph.
#[derive(Debug, Clone)]
pub struct MdgcnInputs {
    pub x: Tensor,
    pub z: Tensor,
    pub ddi: Option<Tensor>,
    pub graph: BipartiteGraph,
}

/// Pairs scored in one loss evaluation with factual and counterfactual
/// treatments and outcomes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairBatch {
    pub patients: Vec<usize>,
    pub drugs: Vec<usize>,
    pub t: Vec<f64>,
    pub y: Vec<f64>,
    pub t_cf: Vec<f64>,
    pub y_cf: Vec<f64>,
}

impl PairBatch {
    pub fn push(&mut self, i: usize, v: usize, state: &TreatmentState) {
        let f = |b: bool| f64::from(u8::from(b));
        self.patients.push(i);
        self.drugs.push(v);
        self.t.push(f(state.t.get(i, v)));
        self.y.push(f(state.y.get(i, v)));
        self.t_cf.push(f(state.t_cf.get(i, v)));
        self.y_cf.push(f(state.y_cf.get(i, v)));
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub total: Var,
    pub factual: Var,
    pub counterfactual: Option<Var>,
}

/// Observed training links plus one uniformly drawn unlinked drug per link.
pub fn sample_training_pairs(graph: &BipartiteGraph, state: &TreatmentState, rng: &mut impl Rng) -> PairBatch {
    let nd = graph.num_drugs();
    let mut batch = PairBatch::default();
    for (i, drugs) in graph.patient_drugs.iter().enumerate() {
        for &v in drugs {
            batch.push(i, v, state);
        }
        if drugs.is_empty() || drugs.len() == nd {
            continue;
        }
        for _ in drugs {
            let neg = loop {
                let u = rng.random_range(0..nd);
                if drugs.binary_search(&u).is_err() {
                    break u;
                }
            };
            batch.push(i, neg, state);
        }
    }
    batch
}

/// Plain-tensor forms of the individual stages.
pub fn encode_features(model: &Mdgcn, x: &Tensor, z: &Tensor) -> Result<(Tensor, Tensor)> {
    Ok((
        model.patient_encoder.eval(&model.store, x)?,
        model.drug_encoder.eval(&model.store, z)?,
    ))
}

/// Returns `[(H_patients⁽ᵗ⁾, H_drugs⁽ᵗ⁾)]` for `t = 0..=layers`.
pub fn propagate_bipartite(graph: &BipartiteGraph, hp0: &Tensor, hd0: &Tensor, layers: usize) -> Vec<(Tensor, Tensor)> {
    let mut out = vec![(hp0.clone(), hd0.clone())];
    for _ in 0..layers {
        let (p, d) = out.last().expect("non-empty");
        let next = (graph.to_patients.apply(d), graph.to_drugs.apply(p));
        out.push(next);
    }
    out
}

pub fn combine_layers(layers: &[Tensor], beta: &[f64]) -> Result<Tensor> {
    if layers.is_empty() || layers.len() != beta.len() {
        return Err(Error::Shape(format!(
            "{} layers for {} weights",
            layers.len(),
            beta.len()
        )));
    }
    let mut out = layers[0].map(|v| v * beta[0]);
    for (h, &b) in layers.iter().zip(beta).skip(1) {
        if !h.same_shape(&out) {
            return Err(Error::Shape("layer outputs differ in shape".into()));
        }
        for (o, v) in out.data_mut().iter_mut().zip(h.data()) {
            *o += b * v;
        }
    }
    Ok(out)
}

pub fn fuse_ddi(h: &Tensor, ddi: &Tensor) -> Result<Tensor> {
    if !h.same_shape(ddi) {
        return Err(Error::Shape(format!(
            "drug representation {:?} vs DDI embedding {:?}",
            h.shape(),
            ddi.shape()
        )));
    }
    let mut out = h.clone();
    for (o, v) in out.data_mut().iter_mut().zip(ddi.data()) {
        *o += v;
    }
    Ok(out)
}

/// Probability for one pair.
pub fn decode_pair(model: &Mdgcn, h_i: &[f64], h_v: &[f64], t: bool) -> Result<f64> {
    let drug = Tensor::row_vector(h_v.to_vec());
    let logits = model.drug_logits(h_i, &drug, &[t])?;
    Ok(stable_sigmoid(logits[0]))
}

/// A ranked drug with its probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub id: usize,
    pub name: String,
    pub score: f64,
}

/// Ranks by logit descending, then id ascending.
pub fn rank_logits(logits: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    order
}

/// Everything needed to score a new patient.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub model: Mdgcn,
    pub drug_repr: Tensor,
    pub standardizer: Standardizer,
    pub centroids: Tensor,
    pub cluster_treatments: Vec<Vec<bool>>,
    pub feature_names: Vec<String>,
    pub drug_names: Vec<String>,
    pub delta: f64,
    pub use_ddi: bool,
    /// Free-form provenance (seeds, hashes) carried into the manifest.
    pub metadata: serde_json::Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BundleManifest {
    format: String,
    version: u32,
    hidden: usize,
    beta: Vec<f64>,
    delta: f64,
    use_ddi: bool,
    patient_encoder: Mlp,
    drug_encoder: Mlp,
    decoder: Mlp,
    param_names: Vec<String>,
    feature_names: Vec<String>,
    drug_names: Vec<String>,
    cluster_treatments: Vec<Vec<usize>>,
    metadata: serde_json::Value,
}

impl ModelBundle {
    pub fn num_drugs(&self) -> usize {
        self.drug_repr.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_names.len()
    }

    /// Cluster-derived treatment row for standardised features.
    pub fn treatment_for(&self, standardized: &[f64]) -> &[bool] {
        let mut best = (0, f64::INFINITY);
        for c in 0..self.centroids.rows() {
            let d: f64 = self
                .centroids
                .row(c)
                .iter()
                .zip(standardized)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d < best.1 {
                best = (c, d);
            }
        }
        &self.cluster_treatments[best.0]
    }

    /// Logits for every drug given raw (unstandardised) features.
    pub fn logits(&self, raw_features: &[f64]) -> Result<Vec<f64>> {
        if raw_features.len() != self.feature_dim() {
            return Err(Error::Shape(format!(
                "expected {} features, got {}",
                self.feature_dim(),
                raw_features.len()
            )));
        }
        let x = self.standardizer.transform_row(raw_features);
        self.logits_standardized(&x, self.treatment_for(&x))
    }

    pub fn logits_standardized(&self, x: &[f64], treatment: &[bool]) -> Result<Vec<f64>> {
        let h = self.model.encode_patients(&Tensor::row_vector(x.to_vec()))?;
        self.model.drug_logits(h.row(0), &self.drug_repr, treatment)
    }

    /// Top-`k` drugs for raw patient features.
    pub fn suggest(&self, raw_features: &[f64], k: usize) -> Result<Vec<Suggestion>> {
        if k == 0 || k > self.num_drugs() {
            return Err(Error::Argument(format!(
                "k must be in 1..={}, got {k}",
                self.num_drugs()
            )));
        }
        let logits = self.logits(raw_features)?;
        Ok(rank_logits(&logits)
            .into_iter()
            .take(k)
            .map(|v| Suggestion {
                id: v,
                name: self.drug_names[v].clone(),
                score: stable_sigmoid(logits[v]),
            })
            .collect())
    }

    /// Writes `checkpoint.json` and `bundle.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut ck = Checkpoint::default();
        ck.push_store("mdgcn.", &self.model.store);
        ck.push("drug_repr", &self.drug_repr);
        ck.push("centroids", &self.centroids);
        ck.push("standardizer.mean", &Tensor::row_vector(self.standardizer.mean.clone()));
        ck.push(
            "standardizer.scale",
            &Tensor::row_vector(self.standardizer.scale.clone()),
        );
        ck.save(&dir.join("checkpoint.json"))?;
        let manifest = BundleManifest {
            format: BUNDLE_FORMAT.into(),
            version: BUNDLE_VERSION,
            hidden: self.model.hidden,
            beta: self.model.beta.clone(),
            delta: self.delta,
            use_ddi: self.use_ddi,
            patient_encoder: self.model.patient_encoder.clone(),
            drug_encoder: self.model.drug_encoder.clone(),
            decoder: self.model.decoder.clone(),
            param_names: self.model.store.names().to_vec(),
            feature_names: self.feature_names.clone(),
            drug_names: self.drug_names.clone(),
            cluster_treatments: self
                .cluster_treatments
                .iter()
                .map(|row| (0..row.len()).filter(|&v| row[v]).collect())
                .collect(),
            metadata: self.metadata.clone(),
        };
        std::fs::write(dir.join("bundle.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: BundleManifest = serde_json::from_str(&std::fs::read_to_string(dir.join("bundle.json"))?)?;
        if manifest.format != BUNDLE_FORMAT {
            return Err(Error::Format(format!("unknown bundle format `{}`", manifest.format)));
        }
        if manifest.version > BUNDLE_VERSION {
            return Err(Error::Format(format!(
                "bundle version {} is newer than supported",
                manifest.version
            )));
        }
        let ck = Checkpoint::load(&dir.join("checkpoint.json"))?;
        let mut store = ParamStore::new();
        for name in &manifest.param_names {
            store.add(name.clone(), ck.get(&format!("mdgcn.{name}"))?);
        }
        let drug_repr = ck.get("drug_repr")?;
        let nd = drug_repr.rows();
        let cluster_treatments = manifest
            .cluster_treatments
            .iter()
            .map(|ids| {
                let mut row = vec![false; nd];
                for &v in ids {
                    *row.get_mut(v).ok_or(Error::UnknownDrug(v))? = true;
                }
                Ok(row)
            })
            .collect::<Result<Vec<_>>>()?;
        let centroids = ck.get("centroids")?;
        if centroids.rows() != cluster_treatments.len() || manifest.drug_names.len() != nd {
            return Err(Error::Format("bundle parts disagree on cluster or drug count".into()));
        }
        Ok(Self {
            model: Mdgcn {
                store,
                patient_encoder: manifest.patient_encoder,
                drug_encoder: manifest.drug_encoder,
                decoder: manifest.decoder,
                beta: manifest.beta,
                hidden: manifest.hidden,
            },
            drug_repr,
            standardizer: Standardizer {
                mean: ck.get("standardizer.mean")?.into_data(),
                scale: ck.get("standardizer.scale")?.into_data(),
            },
            centroids,
            cluster_treatments,
            feature_names: manifest.feature_names,
            drug_names: manifest.drug_names,
            delta: manifest.delta,
            use_ddi: manifest.use_ddi,
            metadata: manifest.metadata,
        })
    }
}

/// Trained bundle with its learning curves.
#[derive(Debug, Clone)]
pub struct TrainedMdgcn {
    pub bundle: ModelBundle,
    pub total_curve: Vec<f64>,
    pub factual_curve: Vec<f64>,
    pub counterfactual_curve: Vec<f64>,
    /// `(epoch, validation NDCG)` at each check.
    pub validation: Vec<(usize, f64)>,
    pub best_epoch: usize,
}

/// Top-`k` lists for `rows`, each patient using its cluster treatment row.
pub fn rank_patients(
    model: &Mdgcn,
    drug_repr: &Tensor,
    cohort: &Cohort,
    state: &TreatmentState,
    rows: &[usize],
    k: usize,
) -> Result<Vec<RankedSuggestion>> {
    let x = cohort.features.select_rows(rows);
    let h = model.encode_patients(&x)?;
    rows.iter()
        .enumerate()
        .map(|(r, &i)| {
            let treatment = &state.cluster_treatments[state.clusters.labels[i]];
            let logits = model.drug_logits(h.row(r), drug_repr, treatment)?;
            Ok(RankedSuggestion::new(
                cohort.patient_ids[i].clone(),
                rank_logits(&logits).into_iter().take(k).collect(),
                cohort.prescriptions[i].iter().copied(),
            ))
        })
        .collect()
}

/// Trains the recommender; `ddi` must be `|V| × hidden` when fusion is on.
pub fn train_mdgcn(
    cohort: &Cohort,
    state: &TreatmentState,
    drug_features: &Tensor,
    drug_names: &[String],
    ddi: Option<&Tensor>,
    config: &MdgcnConfig,
) -> Result<TrainedMdgcn> {
    let nd = cohort.num_drugs;
    if drug_features.rows() != nd || drug_names.len() != nd {
        return Err(Error::Shape(
            "drug features/names do not match the cohort's drug count".into(),
        ));
    }
    let ddi = if config.use_ddi {
        let d = ddi.ok_or_else(|| Error::Argument("DDI fusion enabled but no embeddings given".into()))?;
        if d.rows() != nd || d.cols() != config.hidden {
            return Err(Error::Shape(format!(
                "DDI embeddings are {:?}, expected [{nd}, {}]",
                d.shape(),
                config.hidden
            )));
        }
        Some(d.clone())
    } else {
        None
    };
    let inputs = MdgcnInputs {
        x: cohort.features.clone(),
        z: drug_features.clone(),
        ddi,
        graph: BipartiteGraph::from_matrix(&state.y),
    };
    let mut init_rng = stage_rng(config.seed, "mdgcn.init");
    let mut model = Mdgcn::new(cohort.feature_dim(), drug_features.cols(), config, &mut init_rng);
    let mut neg_rng = stage_rng(config.seed, "mdgcn.negatives");
    let mut adam = AdamState::new(config.lr, model.store.values());
    let val = cohort.indices(Split::Val);
    let select = config.eval_every > 0 && !val.is_empty();

    let (mut total_curve, mut factual_curve, mut cf_curve) = (Vec::new(), Vec::new(), Vec::new());
    let mut validation = Vec::new();
    let mut best: Option<(f64, usize, Vec<Tensor>)> = None;
    for epoch in 0..config.epochs {
        let batch = sample_training_pairs(&inputs.graph, state, &mut neg_rng);
        if batch.is_empty() {
            return Err(Error::Argument("no training links".into()));
        }
        let mut tape = Tape::new();
        let vars = model.store.bind(&mut tape);
        let parts = model.loss(&mut tape, &vars, &inputs, &batch, config.delta)?;
        let total = tape.value(parts.total).item();
        if !total.is_finite() {
            return Err(Error::Divergence {
                stage: "mdgcn".into(),
                epoch,
            });
        }
        total_curve.push(total);
        factual_curve.push(tape.value(parts.factual).item());
        cf_curve.push(parts.counterfactual.map_or(0.0, |c| tape.value(c).item()));
        let grads = tape.backward(parts.total);
        let g: Vec<Tensor> = vars.iter().map(|v| grads.get(*v)).collect();
        adam.step(model.store.values_mut(), &g).map_err(|e| match e {
            Error::Divergence { .. } => Error::Divergence {
                stage: "mdgcn".into(),
                epoch,
            },
            other => other,
        })?;
        let last = epoch + 1 == config.epochs;
        if select && ((epoch + 1) % config.eval_every == 0 || last) {
            let repr = model.drug_representations(&inputs)?;
            let lists = rank_patients(&model, &repr, cohort, state, &val, config.select_k.min(nd))?;
            let score = ndcg_at_k(&lists).unwrap_or(0.0);
            validation.push((epoch + 1, score));
            if best.as_ref().is_none_or(|b| score > b.0) {
                best = Some((score, epoch + 1, model.store.values().to_vec()));
            }
        }
    }
    let best_epoch = match best {
        Some((_, e, values)) => {
            model.store.load_values(values)?;
            e
        }
        None => config.epochs,
    };
    let drug_repr = model.drug_representations(&inputs)?;
    let bundle = ModelBundle {
        model,
        drug_repr,
        standardizer: cohort.standardizer.clone(),
        centroids: state.clusters.centroids.clone(),
        cluster_treatments: state.cluster_treatments.clone(),
        feature_names: cohort.feature_names.clone(),
        drug_names: drug_names.to_vec(),
        delta: config.delta,
        use_ddi: config.use_ddi,
        metadata: serde_json::Value::Null,
    };
    Ok(TrainedMdgcn {
        bundle,
        total_curve,
        factual_curve,
        counterfactual_curve: cf_curve,
        validation,
        best_epoch,
    })
}
