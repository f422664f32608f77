//! Similarity-weighted baseline: an unobserved patient's score for a drug is
//! the cosine similarity to every observed patient, weighted by whether that
//! patient takes the drug.

use crate::ddigraph::{Cohort, Split};
use crate::error::{Error, Result};
use crate::evalmetrics::RankedSuggestion;
use crate::mdgcn::rank_logits;
use crate::numkit::Tensor;

fn cosine_rows(a: &Tensor, b: &Tensor) -> Tensor {
    let norm = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>().sqrt();
    let na: Vec<f64> = (0..a.rows()).map(|r| norm(a.row(r))).collect();
    let nb: Vec<f64> = (0..b.rows()).map(|r| norm(b.row(r))).collect();
    let mut out = Tensor::zeros(a.rows(), b.rows());
    for i in 0..a.rows() {
        for j in 0..b.rows() {
            if na[i] > 0.0 && nb[j] > 0.0 {
                let dot: f64 = a.row(i).iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
                out.set(i, j, dot / (na[i] * nb[j]));
            }
        }
    }
    out
}

/// `cos(X_unobserved, X_observed) · Y_observed`; zero-norm rows score 0.
pub fn usersim_baseline(x_unobserved: &Tensor, x_observed: &Tensor, y_observed: &Tensor) -> Result<Tensor> {
    if x_observed.rows() == 0 {
        return Err(Error::Argument("observed split is empty".into()));
    }
    if x_unobserved.cols() != x_observed.cols() || y_observed.rows() != x_observed.rows() {
        return Err(Error::Shape(format!(
            "features {:?} / {:?} and medications {:?} disagree",
            x_unobserved.shape(),
            x_observed.shape(),
            y_observed.shape()
        )));
    }
    cosine_rows(x_unobserved, x_observed).matmul(y_observed)
}

/// Features as recorded, with missing cells at the training mean. The
/// baseline works on the patient feature matrix as given, without the
/// standardisation the learned model applies.
pub fn baseline_features(cohort: &Cohort) -> Tensor {
    let mut x = cohort.raw.clone();
    for r in 0..x.rows() {
        for (v, &mean) in x.row_mut(r).iter_mut().zip(&cohort.standardizer.mean) {
            if v.is_nan() {
                *v = mean;
            }
        }
    }
    x
}

/// Top-`k` baseline lists for `rows`, observed patients being the training
/// split.
pub fn usersim_rank(cohort: &Cohort, rows: &[usize], k: usize) -> Result<Vec<RankedSuggestion>> {
    let x = baseline_features(cohort);
    let train = cohort.indices(Split::Train);
    let scores = usersim_baseline(
        &x.select_rows(rows),
        &x.select_rows(&train),
        &cohort.medication_matrix(&train),
    )?;
    Ok(rows
        .iter()
        .enumerate()
        .map(|(r, &i)| {
            RankedSuggestion::new(
                cohort.patient_ids[i].clone(),
                rank_logits(scores.row(r)).into_iter().take(k).collect(),
                cohort.prescriptions[i].iter().copied(),
            )
        })
        .collect())
}
