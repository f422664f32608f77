//! Ranking metrics over top-k suggestion lists.
//!
//! Precision and recall are micro-averaged (total hits over total suggested /
//! total relevant); NDCG is averaged per patient with binary relevance and an
//! ideal ranking truncated at `min(|Q|, k)` hits.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One patient's suggested list and the drugs they actually take.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedSuggestion {
    pub patient: String,
    pub ranked: Vec<usize>,
    pub truth: BTreeSet<usize>,
}

impl RankedSuggestion {
    pub fn new(patient: impl Into<String>, ranked: Vec<usize>, truth: impl IntoIterator<Item = usize>) -> Self {
        Self {
            patient: patient.into(),
            ranked,
            truth: truth.into_iter().collect(),
        }
    }

    fn hits(&self) -> usize {
        self.ranked.iter().filter(|d| self.truth.contains(d)).count()
    }

    fn check(&self) -> Result<()> {
        if self.ranked.is_empty() {
            return Err(Error::Argument(format!(
                "patient {}: empty suggestion list",
                self.patient
            )));
        }
        let unique: BTreeSet<_> = self.ranked.iter().collect();
        if unique.len() != self.ranked.len() {
            return Err(Error::Argument(format!(
                "patient {}: duplicate suggestions",
                self.patient
            )));
        }
        Ok(())
    }
}

fn validate(batch: &[RankedSuggestion]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Argument("empty evaluation batch".into()));
    }
    batch.iter().try_for_each(RankedSuggestion::check)
}

fn with_truth(batch: &[RankedSuggestion]) -> Result<Vec<&RankedSuggestion>> {
    validate(batch)?;
    let kept: Vec<&RankedSuggestion> = batch
        .iter()
        .filter(|s| {
            if s.truth.is_empty() {
                log::warn!("patient {} has no ground-truth drugs; excluded", s.patient);
            }
            !s.truth.is_empty()
        })
        .collect();
    if kept.is_empty() {
        return Err(Error::Argument("no patient in the batch has ground-truth drugs".into()));
    }
    Ok(kept)
}

pub fn precision_at_k(batch: &[RankedSuggestion]) -> Result<f64> {
    validate(batch)?;
    let hits: usize = batch.iter().map(RankedSuggestion::hits).sum();
    let suggested: usize = batch.iter().map(|s| s.ranked.len()).sum();
    Ok(hits as f64 / suggested as f64)
}

pub fn recall_at_k(batch: &[RankedSuggestion]) -> Result<f64> {
    let kept = with_truth(batch)?;
    let hits: usize = kept.iter().map(|s| s.hits()).sum();
    let relevant: usize = kept.iter().map(|s| s.truth.len()).sum();
    Ok(hits as f64 / relevant as f64)
}

fn discount(position: usize) -> f64 {
    1.0 / ((position + 2) as f64).log2()
}

pub fn ndcg_at_k(batch: &[RankedSuggestion]) -> Result<f64> {
    let kept = with_truth(batch)?;
    let total: f64 = kept
        .iter()
        .map(|s| {
            let dcg: f64 = s
                .ranked
                .iter()
                .enumerate()
                .filter(|(_, d)| s.truth.contains(d))
                .map(|(p, _)| discount(p))
                .sum();
            let ideal: f64 = (0..s.truth.len().min(s.ranked.len())).map(discount).sum();
            dcg / ideal
        })
        .sum();
    Ok(total / kept.len() as f64)
}

/// Truncates every list to its first `k` entries.
pub fn truncate(batch: &[RankedSuggestion], k: usize) -> Vec<RankedSuggestion> {
    batch
        .iter()
        .map(|s| RankedSuggestion {
            patient: s.patient.clone(),
            ranked: s.ranked.iter().copied().take(k).collect(),
            truth: s.truth.clone(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub k: usize,
    pub value: f64,
}

/// Rows of `metric,k,value`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub rows: Vec<MetricRow>,
}

impl MetricTable {
    pub fn push(&mut self, metric: &str, k: usize, value: f64) {
        self.rows.push(MetricRow {
            metric: metric.to_string(),
            k,
            value,
        });
    }

    pub fn get(&self, metric: &str, k: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.metric == metric && r.k == k)
            .map(|r| r.value)
    }

    /// Precision, Recall and NDCG for each `k` in `ks`, computed on
    /// prefixes of `batch`.
    pub fn ranking(batch: &[RankedSuggestion], ks: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut t = Self::default();
        for k in ks {
            let b = truncate(batch, k);
            t.push("precision", k, precision_at_k(&b)?);
            t.push("recall", k, recall_at_k(&b)?);
            t.push("ndcg", k, ndcg_at_k(&b)?);
        }
        Ok(t)
    }

    pub fn extend(&mut self, other: MetricTable) {
        self.rows.extend(other.rows);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Format(format!("metric table: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?)?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let rows = rdr.deserialize().collect::<std::result::Result<Vec<MetricRow>, _>>()?;
        Ok(Self { rows })
    }
}
