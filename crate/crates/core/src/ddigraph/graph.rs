use std::collections::HashMap;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EdgeSign {
    Antagonism,
    /// Sampled pair with no recorded interaction.
    Neutral,
    Synergy,
}

impl EdgeSign {
    pub fn value(self) -> i8 {
        match self {
            EdgeSign::Antagonism => -1,
            EdgeSign::Neutral => 0,
            EdgeSign::Synergy => 1,
        }
    }

    pub fn from_value(v: i64) -> Option<Self> {
        match v {
            -1 => Some(EdgeSign::Antagonism),
            0 => Some(EdgeSign::Neutral),
            1 => Some(EdgeSign::Synergy),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Drug {
    pub id: usize,
    pub name: String,
    pub feature: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DdiEdge {
    pub u: usize,
    pub v: usize,
    pub sign: EdgeSign,
}

impl DdiEdge {
    pub fn key(&self) -> (usize, usize) {
        (self.u.min(self.v), self.u.max(self.v))
    }
}

/// Undirected drug graph with signed edges, at most one per pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DdiGraph {
    drugs: Vec<Drug>,
    edges: Vec<DdiEdge>,
    index: HashMap<(usize, usize), usize>,
    synergy: Vec<Vec<usize>>,
    antagonism: Vec<Vec<usize>>,
    neutral: Vec<Vec<usize>>,
}

impl DdiGraph {
    /// Graph with no edges. Drug ids must be `0..n` in order and share one
    /// feature width.
    pub fn new(drugs: Vec<Drug>) -> Result<Self> {
        let width = drugs.first().map_or(0, |d| d.feature.len());
        for (i, d) in drugs.iter().enumerate() {
            if d.id != i {
                return Err(Error::Ingestion {
                    file: "drugs".into(),
                    row: i + 2,
                    message: format!("drug ids must be dense and ordered; expected {i}, found {}", d.id),
                });
            }
            if d.feature.len() != width {
                return Err(Error::Ingestion {
                    file: "drugs".into(),
                    row: i + 2,
                    message: format!("feature width {} differs from {width}", d.feature.len()),
                });
            }
        }
        let n = drugs.len();
        Ok(Self {
            drugs,
            edges: Vec::new(),
            index: HashMap::new(),
            synergy: vec![Vec::new(); n],
            antagonism: vec![Vec::new(); n],
            neutral: vec![Vec::new(); n],
        })
    }

    /// Drugs named `drug{i}` with one-hot features.
    pub fn with_one_hot_drugs(n: usize) -> Self {
        let drugs = (0..n)
            .map(|i| {
                let mut f = vec![0.0; n];
                f[i] = 1.0;
                Drug {
                    id: i,
                    name: format!("drug{i}"),
                    feature: f,
                }
            })
            .collect();
        Self::new(drugs).expect("generated drugs are well formed")
    }

    pub fn add_edge(&mut self, u: usize, v: usize, sign: EdgeSign) -> Result<()> {
        let n = self.drugs.len();
        if u >= n {
            return Err(Error::UnknownDrug(u));
        }
        if v >= n {
            return Err(Error::UnknownDrug(v));
        }
        if u == v {
            return Err(Error::Argument(format!("self-loop on drug {u}")));
        }
        let key = (u.min(v), u.max(v));
        if let Some(&existing) = self.index.get(&key) {
            let prev = self.edges[existing].sign;
            let msg = if prev == sign {
                format!("duplicate pair ({}, {})", key.0, key.1)
            } else {
                format!(
                    "conflicting duplicate sign for ({}, {}): {} vs {}",
                    key.0,
                    key.1,
                    prev.value(),
                    sign.value()
                )
            };
            return Err(Error::Argument(msg));
        }
        self.index.insert(key, self.edges.len());
        self.edges.push(DdiEdge { u, v, sign });
        let lists = match sign {
            EdgeSign::Synergy => &mut self.synergy,
            EdgeSign::Antagonism => &mut self.antagonism,
            EdgeSign::Neutral => &mut self.neutral,
        };
        lists[u].push(v);
        lists[v].push(u);
        Ok(())
    }

    pub fn num_drugs(&self) -> usize {
        self.drugs.len()
    }

    pub fn drugs(&self) -> &[Drug] {
        &self.drugs
    }

    pub fn drug(&self, id: usize) -> Option<&Drug> {
        self.drugs.get(id)
    }

    pub fn edges(&self) -> &[DdiEdge] {
        &self.edges
    }

    pub fn feature_dim(&self) -> usize {
        self.drugs.first().map_or(0, |d| d.feature.len())
    }

    pub fn sign(&self, u: usize, v: usize) -> Option<EdgeSign> {
        self.index.get(&(u.min(v), u.max(v))).map(|&i| self.edges[i].sign)
    }

    pub fn synergy_neighbors(&self, v: usize) -> &[usize] {
        &self.synergy[v]
    }

    pub fn antagonism_neighbors(&self, v: usize) -> &[usize] {
        &self.antagonism[v]
    }

    pub fn neutral_neighbors(&self, v: usize) -> &[usize] {
        &self.neutral[v]
    }

    /// Neighbours over edges of any sign, in ascending id order.
    pub fn neighbors(&self, v: usize) -> Vec<usize> {
        let mut all: Vec<usize> = self.synergy[v]
            .iter()
            .chain(&self.antagonism[v])
            .chain(&self.neutral[v])
            .copied()
            .collect();
        all.sort_unstable();
        all
    }

    pub fn count(&self, sign: EdgeSign) -> usize {
        self.edges.iter().filter(|e| e.sign == sign).count()
    }

    /// Copy keeping only synergy and antagonism edges.
    pub fn signed_only(&self) -> DdiGraph {
        let mut g = DdiGraph::new(self.drugs.clone()).expect("validated drugs");
        for e in self.edges.iter().filter(|e| e.sign != EdgeSign::Neutral) {
            g.add_edge(e.u, e.v, e.sign).expect("edges already validated");
        }
        g
    }

    /// Copy with `extra` edges appended.
    pub fn with_edges(&self, extra: &[DdiEdge]) -> Result<DdiGraph> {
        let mut g = self.clone();
        for e in extra {
            g.add_edge(e.u, e.v, e.sign)?;
        }
        Ok(g)
    }

    pub fn drug_features(&self) -> crate::numkit::Tensor {
        let rows: Vec<Vec<f64>> = self.drugs.iter().map(|d| d.feature.clone()).collect();
        crate::numkit::Tensor::matrix(rows.len(), self.feature_dim(), rows.into_iter().flatten().collect())
            .expect("uniform feature width")
    }

    pub fn write_drugs(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["id".to_string(), "name".to_string()];
        header.extend((0..self.feature_dim()).map(|i| format!("f{i}")));
        w.write_record(&header)?;
        for d in &self.drugs {
            let mut rec = vec![d.id.to_string(), d.name.clone()];
            rec.extend(d.feature.iter().map(|f| f.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes the synergy and antagonism edges; neutral edges are a training
    /// artefact and are not part of the file schema.
    pub fn write_edges(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["u", "v", "sign"])?;
        for e in self.edges.iter().filter(|e| e.sign != EdgeSign::Neutral) {
            w.write_record([e.u.to_string(), e.v.to_string(), e.sign.value().to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn ingest_err(file: &Path, row: usize, message: impl Into<String>) -> Error {
    Error::Ingestion {
        file: file.display().to_string(),
        row,
        message: message.into(),
    }
}

fn record_line(rec: &csv::StringRecord) -> usize {
    rec.position().map_or(0, |p| p.line() as usize)
}

/// Reads `drugs.csv` (`id,name,f0..`) and `ddi_edges.csv` (`u,v,sign`).
pub fn load_ddi_graph(drug_file: &Path, edge_file: &Path) -> Result<DdiGraph> {
    let mut drugs = Vec::new();
    let mut rdr = csv::Reader::from_path(drug_file)?;
    for rec in rdr.records() {
        let rec = rec?;
        let line = record_line(&rec);
        if rec.len() < 2 {
            return Err(ingest_err(drug_file, line, "expected id,name,features"));
        }
        let id: usize = rec[0]
            .trim()
            .parse()
            .map_err(|_| ingest_err(drug_file, line, format!("bad drug id `{}`", &rec[0])))?;
        let feature = rec
            .iter()
            .skip(2)
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| ingest_err(drug_file, line, format!("bad feature `{f}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        drugs.push(Drug {
            id,
            name: rec[1].to_string(),
            feature,
        });
    }
    let mut graph = DdiGraph::new(drugs).map_err(|e| match e {
        Error::Ingestion { row, message, .. } => ingest_err(drug_file, row, message),
        other => other,
    })?;

    let mut rdr = csv::Reader::from_path(edge_file)?;
    for rec in rdr.records() {
        let rec = rec?;
        let line = record_line(&rec);
        if rec.len() != 3 {
            return Err(ingest_err(edge_file, line, "expected u,v,sign"));
        }
        let field = |i: usize| -> Result<i64> {
            rec[i]
                .trim()
                .parse()
                .map_err(|_| ingest_err(edge_file, line, format!("not an integer: `{}`", &rec[i])))
        };
        let (u, v, s) = (field(0)?, field(1)?, field(2)?);
        if u < 0 || v < 0 {
            return Err(ingest_err(edge_file, line, "negative drug id"));
        }
        let sign = match EdgeSign::from_value(s) {
            Some(sign @ (EdgeSign::Synergy | EdgeSign::Antagonism)) => sign,
            _ => return Err(ingest_err(edge_file, line, format!("sign must be -1 or 1, got {s}"))),
        };
        graph
            .add_edge(u as usize, v as usize, sign)
            .map_err(|e| ingest_err(edge_file, line, e.to_string()))?;
    }
    Ok(graph)
}

/// Draws `count` distinct unlinked pairs as neutral edges, ordered by pair.
pub fn sample_zero_edges(graph: &DdiGraph, count: usize, seed: u64) -> Result<Vec<DdiEdge>> {
    let n = graph.num_drugs();
    let mut free = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if graph.sign(u, v).is_none() {
                free.push((u, v));
            }
        }
    }
    if count > free.len() {
        return Err(Error::Sampling(format!(
            "requested {count} neutral pairs but only {} unlinked pairs exist",
            free.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = index::sample(&mut rng, free.len(), count).into_vec();
    picked.sort_unstable();
    Ok(picked
        .into_iter()
        .map(|i| DdiEdge {
            u: free[i].0,
            v: free[i].1,
            sign: EdgeSign::Neutral,
        })
        .collect())
}
