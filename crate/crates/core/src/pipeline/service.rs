//! Request handling over an immutable model snapshot. Transport-agnostic so
//! the HTTP layer only maps errors to status codes.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::run::DataPaths;
use crate::ddigraph::{load_ddi_graph, DdiGraph};
use crate::error::{Error, Result};
use crate::mdgcn::{ModelBundle, Suggestion};
use crate::medsupport::{
    explain, suggestion_satisfaction, truss_decomposition, ExplanationSubgraph, SignedGraph, TrussIndex,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuggestRequest {
    /// Raw feature values in schema order; `null` marks a missing value.
    pub features: Vec<Option<f64>>,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestResponse {
    pub drugs: Vec<Suggestion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplainRequest {
    pub drug_ids: Vec<usize>,
    #[serde(default)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SsRequest {
    pub drug_ids: Vec<usize>,
    #[serde(default)]
    pub alpha: Option<f64>,
    /// Subgraph to score over; when absent, the explanation subgraph of
    /// `drug_ids` is used.
    #[serde(default)]
    pub nodes: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsResponse {
    pub ss: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrugInfo {
    pub id: usize,
    pub name: String,
    pub synergy_degree: usize,
    pub antagonism_degree: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureField {
    pub name: String,
    /// Training mean, a sensible form default.
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub features: Vec<FeatureField>,
    pub num_drugs: usize,
    pub default_alpha: f64,
}

/// A loaded model with its interaction graph and truss index.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub bundle: ModelBundle,
    pub graph: SignedGraph,
    pub truss: TrussIndex,
    pub alpha: f64,
}

impl Snapshot {
    pub fn new(bundle: ModelBundle, ddi: &DdiGraph, alpha: f64) -> Result<Self> {
        if ddi.num_drugs() != bundle.num_drugs() {
            return Err(Error::Shape(format!(
                "bundle knows {} drugs, interaction graph {}",
                bundle.num_drugs(),
                ddi.num_drugs()
            )));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {alpha}")));
        }
        let graph = SignedGraph::from_ddi(ddi);
        let truss = truss_decomposition(&graph);
        Ok(Self {
            bundle,
            graph,
            truss,
            alpha,
        })
    }

    /// Bundle directory plus the drug and edge files of `data_dir`.
    pub fn load(bundle_dir: &Path, data_dir: &Path, alpha: f64) -> Result<Self> {
        let bundle = ModelBundle::load(bundle_dir)?;
        let paths = DataPaths::in_dir(data_dir);
        let ddi = load_ddi_graph(&paths.drugs, &paths.edges)?;
        Self::new(bundle, &ddi, alpha)
    }

    fn check_drugs(&self, ids: &[usize]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::Argument("drug_ids: must not be empty".into()));
        }
        match ids.iter().find(|&&v| v >= self.graph.num_nodes()) {
            Some(&v) => Err(Error::UnknownDrug(v)),
            None => Ok(()),
        }
    }

    fn alpha_or_default(&self, alpha: Option<f64>) -> Result<f64> {
        let a = alpha.unwrap_or(self.alpha);
        if (0.0..=1.0).contains(&a) {
            Ok(a)
        } else {
            Err(Error::Argument(format!("alpha: must lie in [0, 1], got {a}")))
        }
    }

    pub fn suggest(&self, req: &SuggestRequest) -> Result<SuggestResponse> {
        let d = self.bundle.feature_dim();
        if req.features.len() != d {
            return Err(Error::Argument(format!(
                "features: expected {d} values, got {}",
                req.features.len()
            )));
        }
        if let Some(j) = req.features.iter().position(|v| v.is_some_and(|x| !x.is_finite())) {
            return Err(Error::Argument(format!("features[{j}]: must be finite")));
        }
        let nd = self.bundle.num_drugs();
        if req.k == 0 || req.k > nd {
            return Err(Error::Argument(format!("k: must be in 1..={nd}, got {}", req.k)));
        }
        let raw: Vec<f64> = req.features.iter().map(|v| v.unwrap_or(f64::NAN)).collect();
        Ok(SuggestResponse {
            drugs: self.bundle.suggest(&raw, req.k)?,
        })
    }

    pub fn explain(&self, req: &ExplainRequest) -> Result<ExplanationSubgraph> {
        self.check_drugs(&req.drug_ids)?;
        explain(
            &self.graph,
            &self.truss,
            &req.drug_ids,
            self.alpha_or_default(req.alpha)?,
        )
    }

    /// Suggestion satisfaction of `drug_ids`, over the given node set's
    /// induced signed subgraph or else over their explanation subgraph.
    pub fn ss(&self, req: &SsRequest) -> Result<SsResponse> {
        self.check_drugs(&req.drug_ids)?;
        let alpha = self.alpha_or_default(req.alpha)?;
        let ss = match &req.nodes {
            None => explain(&self.graph, &self.truss, &req.drug_ids, alpha)?.ss,
            Some(nodes) => {
                self.check_drugs(nodes)?;
                let keep: BTreeSet<usize> = nodes.iter().copied().collect();
                if let Some(v) = req.drug_ids.iter().find(|v| !keep.contains(v)) {
                    return Err(Error::Argument(format!(
                        "nodes: must contain every drug id, missing {v}"
                    )));
                }
                let edges: Vec<(usize, usize, i8)> = self
                    .graph
                    .edges()
                    .into_iter()
                    .filter(|(u, v, _)| keep.contains(u) && keep.contains(v))
                    .collect();
                suggestion_satisfaction(keep.len(), &edges, &req.drug_ids, alpha)?
            }
        };
        Ok(SsResponse { ss, alpha })
    }

    pub fn drugs(&self) -> Vec<DrugInfo> {
        (0..self.graph.num_nodes())
            .map(|v| {
                let signs: Vec<i8> = self.graph.neighbors(v).filter_map(|w| self.graph.sign(v, w)).collect();
                DrugInfo {
                    id: v,
                    name: self.graph.name(v).to_string(),
                    synergy_degree: signs.iter().filter(|&&s| s > 0).count(),
                    antagonism_degree: signs.iter().filter(|&&s| s < 0).count(),
                }
            })
            .collect()
    }

    pub fn schema(&self) -> FeatureSchema {
        FeatureSchema {
            features: self
                .bundle
                .feature_names
                .iter()
                .zip(&self.bundle.standardizer.mean)
                .map(|(name, &mean)| FeatureField {
                    name: name.clone(),
                    mean,
                })
                .collect(),
            num_drugs: self.bundle.num_drugs(),
            default_alpha: self.alpha,
        }
    }
}
