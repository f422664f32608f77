//! Planted-group synthetic cohorts with the same file schema as real data.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ddigraph::{Cohort, CohortConfig, DdiGraph, Drug, EdgeSign};
use crate::error::{Error, Result};
use crate::numkit::Tensor;
use crate::seed::{stage_rng, stage_seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub groups: usize,
    pub patients_per_group: usize,
    pub drugs_per_group: usize,
    /// Total drug catalogue; drugs beyond the group blocks belong to no group.
    pub num_drugs: usize,
    pub patient_dim: usize,
    pub drug_dim: usize,
    /// Standard deviation of patient features around their group centroid.
    pub noise: f64,
    /// Shared positive level of every patient feature, as lab values have.
    pub feature_offset: f64,
    /// The first `core_drugs` of each group block are its core therapy.
    pub core_drugs: usize,
    pub core_adoption: f64,
    pub adjunct_adoption: f64,
    /// Probability of a synergy edge between two drugs of one group.
    pub synergy_density: f64,
    /// Probability of an antagonism edge between drugs of different groups.
    pub antagonism_density: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            groups: 5,
            patients_per_group: 40,
            drugs_per_group: 8,
            num_drugs: 40,
            patient_dim: 16,
            drug_dim: 16,
            noise: 0.1,
            feature_offset: 5.0,
            core_drugs: 4,
            core_adoption: 0.9,
            adjunct_adoption: 0.1,
            synergy_density: 0.8,
            antagonism_density: 0.05,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("groups", self.groups),
            ("patients_per_group", self.patients_per_group),
            ("drugs_per_group", self.drugs_per_group),
            ("num_drugs", self.num_drugs),
            ("patient_dim", self.patient_dim),
            ("drug_dim", self.drug_dim),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, c)| *c == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.groups * self.drugs_per_group > self.num_drugs {
            return Err(Error::Config(format!(
                "{} groups × {} drugs exceed the catalogue of {}",
                self.groups, self.drugs_per_group, self.num_drugs
            )));
        }
        if self.core_drugs > self.drugs_per_group {
            return Err(Error::Config("core_drugs exceeds drugs_per_group".into()));
        }
        for (name, p) in [
            ("core_adoption", self.core_adoption),
            ("adjunct_adoption", self.adjunct_adoption),
            ("synergy_density", self.synergy_density),
            ("antagonism_density", self.antagonism_density),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!(
                "noise must be finite and non-negative, got {}",
                self.noise
            )));
        }
        Ok(())
    }

    pub fn num_patients(&self) -> usize {
        self.groups * self.patients_per_group
    }
}

/// Generator ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedTruth {
    /// Group of every patient.
    pub labels: Vec<usize>,
    /// Drug ids of every group block.
    pub group_drugs: Vec<Vec<usize>>,
    /// Adoption probability of every drug within its group (0 for unassigned).
    pub adoption: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SyntheticCohort {
    pub graph: DdiGraph,
    pub cohort: Cohort,
    pub truth: PlantedTruth,
}

impl SyntheticCohort {
    /// Writes the four input files plus `groups.csv` (`patient_id,group`).
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.graph.write_drugs(&dir.join(super::DRUGS_FILE))?;
        self.graph.write_edges(&dir.join(super::EDGES_FILE))?;
        self.cohort.write_patients(&dir.join(super::PATIENTS_FILE))?;
        self.cohort.write_prescriptions(&dir.join(super::PRESCRIPTIONS_FILE))?;
        let mut w = csv::Writer::from_path(dir.join(super::GROUPS_FILE))?;
        w.write_record(["patient_id", "group"])?;
        for (id, g) in self.cohort.patient_ids.iter().zip(&self.truth.labels) {
            w.write_record([id.clone(), g.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn gaussian_rows(rng: &mut impl Rng, rows: usize, cols: usize, sd: f64) -> Vec<Vec<f64>> {
    let normal = Normal::new(0.0, sd).expect("finite non-negative sd");
    (0..rows)
        .map(|_| (0..cols).map(|_| normal.sample(rng)).collect())
        .collect()
}

/// Groups of patients with Gaussian features around distinct centroids; each
/// group takes its own block of drugs, core drugs with high probability and
/// adjuncts with low probability. Synergy edges are planted inside blocks and
/// antagonism edges across them. A patient who draws no drug gets the first
/// core drug of their group.
pub fn generate_synthetic_cohort(config: &SynthConfig) -> Result<SyntheticCohort> {
    config.validate()?;
    let g_count = config.groups;
    let dpg = config.drugs_per_group;

    let mut centroid_rng = stage_rng(config.seed, "synth.centroids");
    let patient_centroids = gaussian_rows(&mut centroid_rng, g_count, config.patient_dim, 1.0);

    let group_drugs: Vec<Vec<usize>> = (0..g_count).map(|g| (g * dpg..(g + 1) * dpg).collect()).collect();
    let mut drug_group = vec![None; config.num_drugs];
    let mut adoption = vec![0.0; config.num_drugs];
    for (g, drugs) in group_drugs.iter().enumerate() {
        for (j, &v) in drugs.iter().enumerate() {
            drug_group[v] = Some(g);
            adoption[v] = if j < config.core_drugs {
                config.core_adoption
            } else {
                config.adjunct_adoption
            };
        }
    }

    // drug features are independent of the patient groups, as descriptors
    // of chemistry or knowledge-graph embeddings would be
    let mut drug_rng = stage_rng(config.seed, "synth.drugs");
    let drugs: Vec<Drug> = gaussian_rows(&mut drug_rng, config.num_drugs, config.drug_dim, 1.0)
        .into_iter()
        .enumerate()
        .map(|(v, feature)| Drug {
            id: v,
            name: format!("drug{v:02}"),
            feature,
        })
        .collect();
    let noise = Normal::new(0.0, config.noise).expect("validated noise");
    let mut graph = DdiGraph::new(drugs)?;

    let mut edge_rng = stage_rng(config.seed, "synth.edges");
    for u in 0..config.num_drugs {
        for v in u + 1..config.num_drugs {
            let (sign, p) = match (drug_group[u], drug_group[v]) {
                (Some(a), Some(b)) if a == b => (EdgeSign::Synergy, config.synergy_density),
                (Some(_), Some(_)) => (EdgeSign::Antagonism, config.antagonism_density),
                _ => continue,
            };
            if edge_rng.random_bool(p) {
                graph.add_edge(u, v, sign)?;
            }
        }
    }

    let n = config.num_patients();
    let mut patient_rng = stage_rng(config.seed, "synth.patients");
    let mut labels = Vec::with_capacity(n);
    let mut raw = Vec::with_capacity(n * config.patient_dim);
    let mut prescriptions = Vec::with_capacity(n);
    for g in 0..g_count {
        for _ in 0..config.patients_per_group {
            labels.push(g);
            raw.extend(
                patient_centroids[g]
                    .iter()
                    .map(|c| config.feature_offset + c + noise.sample(&mut patient_rng)),
            );
            let mut taken: Vec<usize> = group_drugs[g]
                .iter()
                .copied()
                .filter(|&v| patient_rng.random_bool(adoption[v]))
                .collect();
            if taken.is_empty() {
                taken.push(group_drugs[g][0]);
            }
            prescriptions.push(taken);
        }
    }
    let width = (n.max(1) as f64).log10().floor() as usize + 1;
    let patient_ids = (0..n).map(|i| format!("P{i:0width$}")).collect();
    let feature_names = (0..config.patient_dim).map(|j| format!("x{j}")).collect();
    let cohort_config = CohortConfig {
        seed: stage_seed(config.seed, "synth.split"),
        ..CohortConfig::default()
    };
    let cohort = Cohort::from_parts(
        patient_ids,
        feature_names,
        Tensor::matrix(n, config.patient_dim, raw)?,
        prescriptions,
        config.num_drugs,
        &cohort_config,
    )?;
    Ok(SyntheticCohort {
        graph,
        cohort,
        truth: PlantedTruth {
            labels,
            group_drugs,
            adoption,
        },
    })
}

/// Chance-corrected agreement between two labelings (1 = identical
/// partitions up to renaming).
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape("labelings differ in length".into()));
    }
    let pairs = |c: usize| (c * c.saturating_sub(1)) as f64 / 2.0;
    let mut table: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut rows: BTreeMap<usize, usize> = BTreeMap::new();
    let mut cols: BTreeMap<usize, usize> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| pairs(c)).sum();
    let row_sum: f64 = rows.values().map(|&c| pairs(c)).sum();
    let col_sum: f64 = cols.values().map(|&c| pairs(c)).sum();
    let total = pairs(a.len());
    let expected = if total > 0.0 { row_sum * col_sum / total } else { 0.0 };
    let max = (row_sum + col_sum) / 2.0;
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}
