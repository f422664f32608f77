use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::synth::SynthConfig;
use crate::causal::CfConfig;
use crate::ddigcn::DdiGcnConfig;
use crate::ddigraph::CohortConfig;
use crate::error::{Error, Result};
use crate::mdgcn::MdgcnConfig;
use crate::seed::stage_seed;

/// Environment variable naming the configuration file.
pub const CONFIG_ENV: &str = "MEDSUGGEST_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Ranking metrics are reported for k = 1..=max_k.
    pub max_k: usize,
    /// Suggestion satisfaction is reported for k = ss_min_k..=max_k.
    pub ss_min_k: usize,
    pub alpha: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            max_k: 6,
            ss_min_k: 2,
            alpha: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServeConfig {
    pub host: String,
    pub port: u16,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
        }
    }
}

/// Whole-run configuration. Stage seeds inside the sub-sections are derived
/// from `seed` and any value given there is replaced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Directory holding drugs.csv, ddi_edges.csv, patients.csv and
    /// prescriptions.csv.
    pub data_dir: PathBuf,
    /// Where run artefacts and the model bundle are written.
    pub output_dir: PathBuf,
    /// Neutral training pairs sampled per signed edge.
    pub zero_edge_ratio: f64,
    pub split: CohortConfig,
    pub ddigcn: DdiGcnConfig,
    pub causal: CfConfig,
    pub mdgcn: MdgcnConfig,
    pub eval: EvalConfig,
    pub synth: SynthConfig,
    pub serve: ServeConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data_dir: PathBuf::from("data"),
            output_dir: PathBuf::from("runs/latest"),
            zero_edge_ratio: 1.0,
            split: CohortConfig::default(),
            ddigcn: DdiGcnConfig::default(),
            causal: CfConfig::default(),
            mdgcn: MdgcnConfig::default(),
            eval: EvalConfig::default(),
            synth: SynthConfig::default(),
            serve: ServeConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// `path` if given, else the file named by the environment variable,
    /// else defaults.
    pub fn resolve(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) => Self::load(Path::new(&p)),
                None => Ok(Self::default()),
            },
        }
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Per-stage seeds derived from the root seed.
    pub fn stage_seeds(&self) -> BTreeMap<String, u64> {
        ["split", "zero_edges", "ddigcn", "causal", "mdgcn"]
            .into_iter()
            .map(|s| (s.to_string(), stage_seed(self.seed, s)))
            .collect()
    }

    /// Copy with every stage seed replaced by its derived value.
    pub fn seeded(&self) -> Self {
        let seeds = self.stage_seeds();
        let mut c = self.clone();
        c.split.seed = seeds["split"];
        c.ddigcn.seed = seeds["ddigcn"];
        c.causal.seed = seeds["causal"];
        c.mdgcn.seed = seeds["mdgcn"];
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.mdgcn.use_ddi && self.ddigcn.dim != self.mdgcn.hidden {
            return Err(Error::Config(format!(
                "DDI embedding width {} must equal the recommender width {} when fusion is on",
                self.ddigcn.dim, self.mdgcn.hidden
            )));
        }
        if self.ddigcn.backbone == crate::ddigcn::Backbone::Sgcn && !self.ddigcn.dim.is_multiple_of(2) {
            return Err(Error::Config("SGCN embedding width must be even".into()));
        }
        if !(self.zero_edge_ratio >= 0.0 && self.zero_edge_ratio.is_finite()) {
            return Err(Error::Config("zero_edge_ratio must be finite and non-negative".into()));
        }
        if self.eval.max_k == 0 || self.eval.ss_min_k == 0 {
            return Err(Error::Config("evaluation cut-offs must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.eval.alpha) {
            return Err(Error::Config(format!(
                "alpha must lie in [0, 1], got {}",
                self.eval.alpha
            )));
        }
        if self.mdgcn.delta < 0.0 {
            return Err(Error::Config("delta must be non-negative".into()));
        }
        self.synth.validate()
    }
}
