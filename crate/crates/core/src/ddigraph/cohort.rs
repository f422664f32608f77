use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
    Test,
    /// Drawn into training but has no prescriptions to learn from.
    Excluded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Imputation {
    /// Fill missing cells with the training-split column mean.
    TrainMean,
    /// Treat a missing cell as an ingestion error.
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortConfig {
    /// Train/validation/test proportions.
    pub ratio: [u32; 3],
    pub seed: u64,
    pub imputation: Imputation,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            ratio: [5, 3, 2],
            seed: 0,
            imputation: Imputation::TrainMean,
        }
    }
}

/// Per-column affine map fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Population statistics over `rows` ignoring NaN cells. Columns with
    /// variance below `1e-12` keep scale 1 so they centre to zero.
    pub fn fit(raw: &Tensor, rows: &[usize]) -> Result<Self> {
        let d = raw.cols();
        let mut mean = vec![0.0; d];
        let mut scale = vec![1.0; d];
        for j in 0..d {
            let vals: Vec<f64> = rows.iter().map(|&r| raw.get(r, j)).filter(|v| !v.is_nan()).collect();
            if vals.is_empty() {
                return Err(Error::Argument(format!(
                    "feature column {j} has no observed training values"
                )));
            }
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64;
            mean[j] = m;
            if var > 1e-12 {
                scale[j] = var.sqrt();
            }
        }
        Ok(Self { mean, scale })
    }

    /// Standardises one raw row; NaN cells become the column mean (zero).
    pub fn transform_row(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .enumerate()
            .map(|(j, &v)| {
                if v.is_nan() {
                    0.0
                } else {
                    (v - self.mean[j]) / self.scale[j]
                }
            })
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Patients with features, prescriptions and a train/val/test split.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub patient_ids: Vec<String>,
    pub feature_names: Vec<String>,
    /// Raw features as read, NaN marking a missing cell.
    pub raw: Tensor,
    /// Standardised, imputed features.
    pub features: Tensor,
    /// Sorted drug ids per patient.
    pub prescriptions: Vec<Vec<usize>>,
    pub num_drugs: usize,
    pub split: Vec<Split>,
    pub standardizer: Standardizer,
    /// Whether any cell in the column was imputed.
    pub imputed: Vec<bool>,
}

impl Cohort {
    pub fn from_parts(
        patient_ids: Vec<String>,
        feature_names: Vec<String>,
        raw: Tensor,
        prescriptions: Vec<Vec<usize>>,
        num_drugs: usize,
        config: &CohortConfig,
    ) -> Result<Self> {
        let n = patient_ids.len();
        if raw.rows() != n || prescriptions.len() != n || feature_names.len() != raw.cols() {
            return Err(Error::Shape("cohort parts disagree on patient or feature count".into()));
        }
        if config.ratio.iter().sum::<u32>() == 0 {
            return Err(Error::Config("split ratio sums to zero".into()));
        }
        let prescriptions: Vec<Vec<usize>> = prescriptions
            .into_iter()
            .map(|p| p.into_iter().collect::<BTreeSet<_>>().into_iter().collect())
            .collect();
        if let Some(bad) = prescriptions.iter().flatten().find(|&&d| d >= num_drugs) {
            return Err(Error::UnknownDrug(*bad));
        }

        let split = split_patients(n, config, &prescriptions, &patient_ids);
        let train: Vec<usize> = (0..n).filter(|&i| split[i] == Split::Train).collect();
        if train.is_empty() {
            return Err(Error::Argument("training split is empty".into()));
        }

        let d = raw.cols();
        let mut imputed = vec![false; d];
        for r in 0..n {
            for (j, flag) in imputed.iter_mut().enumerate() {
                if raw.get(r, j).is_nan() {
                    if config.imputation == Imputation::Reject {
                        return Err(Error::Ingestion {
                            file: "patients".into(),
                            row: r + 2,
                            message: format!("missing value in column {}", feature_names[j]),
                        });
                    }
                    *flag = true;
                }
            }
        }
        let standardizer = Standardizer::fit(&raw, &train)?;
        let mut features = Tensor::zeros(n, d);
        for r in 0..n {
            features
                .row_mut(r)
                .copy_from_slice(&standardizer.transform_row(raw.row(r)));
        }
        Ok(Self {
            patient_ids,
            feature_names,
            raw,
            features,
            prescriptions,
            num_drugs,
            split,
            standardizer,
            imputed,
        })
    }

    pub fn num_patients(&self) -> usize {
        self.patient_ids.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn indices(&self, which: Split) -> Vec<usize> {
        (0..self.num_patients()).filter(|&i| self.split[i] == which).collect()
    }

    /// Dense binary medication matrix for `rows`, in that order.
    pub fn medication_matrix(&self, rows: &[usize]) -> Tensor {
        let mut y = Tensor::zeros(rows.len(), self.num_drugs);
        for (r, &i) in rows.iter().enumerate() {
            for &d in &self.prescriptions[i] {
                y.set(r, d, 1.0);
            }
        }
        y
    }

    pub fn takes(&self, patient: usize, drug: usize) -> bool {
        self.prescriptions[patient].binary_search(&drug).is_ok()
    }

    /// Writes `patients.csv` (`id,<feature names>`); missing cells are empty.
    pub fn write_patients(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["id".to_string()];
        header.extend(self.feature_names.iter().cloned());
        w.write_record(&header)?;
        for (i, id) in self.patient_ids.iter().enumerate() {
            let mut rec = vec![id.clone()];
            rec.extend(
                self.raw
                    .row(i)
                    .iter()
                    .map(|v| if v.is_nan() { String::new() } else { v.to_string() }),
            );
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_prescriptions(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["patient_id", "drug_id"])?;
        for (i, drugs) in self.prescriptions.iter().enumerate() {
            for d in drugs {
                w.write_record([self.patient_ids[i].clone(), d.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn split_patients(n: usize, config: &CohortConfig, prescriptions: &[Vec<usize>], ids: &[String]) -> Vec<Split> {
    let total = f64::from(config.ratio.iter().sum::<u32>());
    let n_train = ((n as f64) * f64::from(config.ratio[0]) / total).round() as usize;
    let n_val = (((n as f64) * f64::from(config.ratio[1]) / total).round() as usize).min(n - n_train);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
    let mut split = vec![Split::Test; n];
    for (pos, &i) in order.iter().enumerate() {
        split[i] = if pos < n_train {
            if prescriptions[i].is_empty() {
                warn!("patient {} has no prescriptions; excluded from training", ids[i]);
                Split::Excluded
            } else {
                Split::Train
            }
        } else if pos < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    split
}

/// Reads `patients.csv` (`id,x0..`) and `prescriptions.csv`
/// (`patient_id,drug_id`). Empty feature cells are missing values.
pub fn load_cohort(
    patient_file: &Path,
    prescription_file: &Path,
    num_drugs: usize,
    config: &CohortConfig,
) -> Result<Cohort> {
    let ingest = |file: &Path, row: usize, message: String| Error::Ingestion {
        file: file.display().to_string(),
        row,
        message,
    };
    let mut rdr = csv::Reader::from_path(patient_file)?;
    let header = rdr.headers()?.clone();
    if header.is_empty() {
        return Err(ingest(patient_file, 1, "missing header".into()));
    }
    let feature_names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut ids = Vec::new();
    let mut values = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != header.len() {
            return Err(ingest(patient_file, line, format!("expected {} fields", header.len())));
        }
        let id = rec[0].trim().to_string();
        if index.insert(id.clone(), ids.len()).is_some() {
            return Err(ingest(patient_file, line, format!("duplicate patient id `{id}`")));
        }
        for (j, cell) in rec.iter().skip(1).enumerate() {
            let cell = cell.trim();
            if cell.is_empty() {
                if config.imputation == Imputation::Reject {
                    return Err(ingest(
                        patient_file,
                        line,
                        format!("missing value in column {} with no imputation rule", feature_names[j]),
                    ));
                }
                values.push(f64::NAN);
            } else {
                let v: f64 = cell
                    .parse()
                    .map_err(|_| ingest(patient_file, line, format!("non-numeric feature `{cell}`")))?;
                values.push(v);
            }
        }
        ids.push(id);
    }
    let raw = Tensor::matrix(ids.len(), feature_names.len(), values)?;

    let mut prescriptions = vec![Vec::new(); ids.len()];
    let mut rdr = csv::Reader::from_path(prescription_file)?;
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 2 {
            return Err(ingest(prescription_file, line, "expected patient_id,drug_id".into()));
        }
        let p = *index
            .get(rec[0].trim())
            .ok_or_else(|| ingest(prescription_file, line, format!("unknown patient `{}`", &rec[0])))?;
        let d: usize = rec[1]
            .trim()
            .parse()
            .map_err(|_| ingest(prescription_file, line, format!("bad drug id `{}`", &rec[1])))?;
        if d >= num_drugs {
            return Err(ingest(prescription_file, line, format!("unknown drug id {d}")));
        }
        prescriptions[p].push(d);
    }
    Cohort::from_parts(ids, feature_names, raw, prescriptions, num_drugs, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize, d: usize) -> (Vec<String>, Vec<String>, Tensor, Vec<Vec<usize>>) {
        let ids = (0..n).map(|i| format!("p{i}")).collect();
        let names = (0..d).map(|j| format!("x{j}")).collect();
        let raw = Tensor::matrix(n, d, (0..n * d).map(|k| ((k * 7 % 11) as f64) - 3.0).collect()).unwrap();
        let pres = (0..n).map(|i| vec![i % 3, (i + 1) % 3]).collect();
        (ids, names, raw, pres)
    }

    #[test]
    fn ten_patients_split_five_three_two() {
        let (ids, names, raw, pres) = toy(10, 3);
        let c = Cohort::from_parts(ids, names, raw, pres, 3, &CohortConfig::default()).unwrap();
        assert_eq!(c.indices(Split::Train).len(), 5);
        assert_eq!(c.indices(Split::Val).len(), 3);
        assert_eq!(c.indices(Split::Test).len(), 2);
    }

    #[test]
    fn training_patient_without_prescriptions_is_excluded() {
        let (ids, names, raw, _) = toy(10, 2);
        let pres = vec![Vec::new(); 10];
        let cfg = CohortConfig::default();
        let mut pres_some = pres.clone();
        // only patient 0..5 have drugs; whichever unprescribed ones land in train get excluded
        for p in pres_some.iter_mut().take(5) {
            p.push(0);
        }
        let c = Cohort::from_parts(ids, names, raw, pres_some, 1, &cfg).unwrap();
        let excluded = c.indices(Split::Excluded);
        assert!(!excluded.is_empty());
        for i in c.indices(Split::Train) {
            assert!(!c.prescriptions[i].is_empty());
        }
        for i in excluded {
            assert!(c.prescriptions[i].is_empty());
        }
    }

    #[test]
    fn constant_column_standardises_to_zero() {
        let (ids, names, mut raw, pres) = toy(10, 3);
        for r in 0..10 {
            raw.set(r, 1, 4.2);
        }
        let c = Cohort::from_parts(ids, names, raw, pres, 3, &CohortConfig::default()).unwrap();
        for r in 0..10 {
            assert_eq!(c.features.get(r, 1), 0.0);
        }
    }

    #[test]
    fn training_columns_are_standardised() {
        let (ids, names, raw, pres) = toy(40, 4);
        let c = Cohort::from_parts(ids, names, raw, pres, 3, &CohortConfig::default()).unwrap();
        let train = c.indices(Split::Train);
        for j in 0..4 {
            let col: Vec<f64> = train.iter().map(|&r| c.features.get(r, j)).collect();
            let m = col.iter().sum::<f64>() / col.len() as f64;
            let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / col.len() as f64;
            assert!(m.abs() < 1e-10);
            assert!((v - 1.0).abs() < 1e-8 || v.abs() < 1e-8);
        }
    }

    #[test]
    fn missing_cells_are_imputed_or_rejected() {
        let (ids, names, mut raw, pres) = toy(10, 2);
        raw.set(4, 0, f64::NAN);
        let c = Cohort::from_parts(
            ids.clone(),
            names.clone(),
            raw.clone(),
            pres.clone(),
            3,
            &CohortConfig::default(),
        )
        .unwrap();
        assert_eq!(c.features.get(4, 0), 0.0);
        assert_eq!(c.imputed, vec![true, false]);
        let strict = CohortConfig {
            imputation: Imputation::Reject,
            ..CohortConfig::default()
        };
        assert!(matches!(
            Cohort::from_parts(ids, names, raw, pres, 3, &strict),
            Err(Error::Ingestion { .. })
        ));
    }

    #[test]
    fn export_then_reload_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let (ids, names, mut raw, pres) = toy(12, 3);
        raw.set(2, 2, f64::NAN);
        let cfg = CohortConfig {
            seed: 9,
            ..CohortConfig::default()
        };
        let c = Cohort::from_parts(ids, names, raw, pres, 3, &cfg).unwrap();
        let (pp, rp) = (dir.path().join("p.csv"), dir.path().join("r.csv"));
        c.write_patients(&pp).unwrap();
        c.write_prescriptions(&rp).unwrap();
        let back = load_cohort(&pp, &rp, 3, &cfg).unwrap();
        assert_eq!(back.patient_ids, c.patient_ids);
        assert_eq!(back.prescriptions, c.prescriptions);
        assert_eq!(back.split, c.split);
        assert_eq!(back.features, c.features);
        // NaN != NaN, compare raw cell by cell
        for (a, b) in back.raw.data().iter().zip(c.raw.data()) {
            assert!(a == b || (a.is_nan() && b.is_nan()));
        }
    }

    #[test]
    fn non_numeric_feature_is_ingestion_error() {
        let dir = tempfile::tempdir().unwrap();
        let pp = dir.path().join("p.csv");
        let rp = dir.path().join("r.csv");
        std::fs::write(&pp, "id,x0\na,1.0\nb,oops\n").unwrap();
        std::fs::write(&rp, "patient_id,drug_id\na,0\n").unwrap();
        match load_cohort(&pp, &rp, 1, &CohortConfig::default()) {
            Err(Error::Ingestion { row, .. }) => assert_eq!(row, 3),
            other => panic!("{other:?}"),
        }
    }
}
