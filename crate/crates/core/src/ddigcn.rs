//! Drug relation embeddings learned by regressing signed interaction edges.
//!
//! Two backbones are available. [`Backbone::Gin`] aggregates the mean of all
//! neighbours (synergy, antagonism and sampled neutral pairs) and passes
//! `(1 + ε)·z_v + mean` through a two-layer MLP. [`Backbone::Sgcn`] keeps a
//! synergy path and an antagonism path per drug and mixes them through the
//! balanced/unbalanced neighbour sets. Either way the score of a pair is the
//! inner product of the two final embeddings, trained with mean squared error
//! against the edge sign.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ddigraph::{DdiEdge, DdiGraph, EdgeSign};
use crate::error::{Error, Result};
use crate::numkit::{Activation, AdamState, ColumnStats, Mlp, ParamId, ParamStore, RowMix, Tape, Tensor, Var};
use crate::seed::stage_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backbone {
    Gin,
    Sgcn,
}

impl std::str::FromStr for Backbone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gin" => Ok(Backbone::Gin),
            "sgcn" => Ok(Backbone::Sgcn),
            other => Err(Error::Config(format!("unknown backbone `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DdiGcnConfig {
    pub backbone: Backbone,
    pub layers: usize,
    /// Final embedding width (SGCN splits it evenly over its two paths).
    pub dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub bn_momentum: f64,
    pub seed: u64,
}

impl Default for DdiGcnConfig {
    fn default() -> Self {
        Self {
            backbone: Backbone::Sgcn,
            layers: 3,
            dim: 64,
            epochs: 400,
            lr: 0.001,
            bn_momentum: 0.1,
            seed: 0,
        }
    }
}

/// One GIN convolution. The MLP output of every layer but the last is
/// batch-normalised and passed through ReLU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GinLayer {
    pub epsilon: ParamId,
    pub mlp: Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgcnLayer {
    pub w_balanced: ParamId,
    pub w_unbalanced: ParamId,
    pub activation: Activation,
    /// Per-path input width.
    pub in_width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Layers {
    Gin(Vec<GinLayer>),
    Sgcn(Vec<SgcnLayer>),
}

/// Neighbour aggregation operators derived from a DDI graph.
#[derive(Debug, Clone)]
pub struct DdiStructure {
    pub any_mean: Arc<RowMix>,
    pub synergy_mean: Arc<RowMix>,
    pub antagonism_mean: Arc<RowMix>,
}

impl DdiStructure {
    pub fn new(graph: &DdiGraph) -> Self {
        let n = graph.num_drugs();
        let any: Vec<Vec<usize>> = (0..n).map(|v| graph.neighbors(v)).collect();
        let sorted = |sign: EdgeSign| -> Vec<Vec<usize>> {
            (0..n)
                .map(|v| {
                    let mut ns = match sign {
                        EdgeSign::Synergy => graph.synergy_neighbors(v).to_vec(),
                        _ => graph.antagonism_neighbors(v).to_vec(),
                    };
                    ns.sort_unstable();
                    ns
                })
                .collect()
        };
        Self {
            any_mean: Arc::new(RowMix::mean(n, &any)),
            synergy_mean: Arc::new(RowMix::mean(n, &sorted(EdgeSign::Synergy))),
            antagonism_mean: Arc::new(RowMix::mean(n, &sorted(EdgeSign::Antagonism))),
        }
    }
}

/// Final drug relation representations, one row per drug.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdiEmbeddings {
    pub z: Tensor,
}

impl DdiEmbeddings {
    pub fn zeros(num_drugs: usize, dim: usize) -> Self {
        Self {
            z: Tensor::zeros(num_drugs, dim),
        }
    }

    pub fn score(&self, u: usize, v: usize) -> f64 {
        edge_score(self.z.row(u), self.z.row(v))
    }

    /// CSV with header `drug_id,e0..`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["drug_id".to_string()];
        header.extend((0..self.z.cols()).map(|i| format!("e{i}")));
        w.write_record(&header)?;
        for r in 0..self.z.rows() {
            let mut rec = vec![r.to_string()];
            rec.extend(self.z.row(r).iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            let bad = |m: String| Error::Ingestion {
                file: path.display().to_string(),
                row: line,
                message: m,
            };
            let id: usize = rec[0].trim().parse().map_err(|_| bad("bad drug id".into()))?;
            let vals = rec
                .iter()
                .skip(1)
                .map(|c| c.trim().parse::<f64>().map_err(|_| bad(format!("bad value `{c}`"))))
                .collect::<Result<Vec<_>>>()?;
            rows.push((id, vals));
        }
        rows.sort_by_key(|r| r.0);
        if rows.iter().enumerate().any(|(i, r)| r.0 != i) {
            return Err(Error::Format("embedding ids must be dense".into()));
        }
        let dim = rows.first().map_or(0, |r| r.1.len());
        let n = rows.len();
        Ok(Self {
            z: Tensor::matrix(n, dim, rows.into_iter().flat_map(|r| r.1).collect())?,
        })
    }
}

/// Inner-product score of two drug embeddings.
pub fn edge_score(z_v: &[f64], z_u: &[f64]) -> f64 {
    z_v.iter().zip(z_u).map(|(a, b)| a * b).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdiGcn {
    pub store: ParamStore,
    pub layers: Layers,
    pub num_drugs: usize,
    pub dim: usize,
}

impl DdiGcn {
    pub fn new(num_drugs: usize, config: &DdiGcnConfig, rng: &mut impl Rng) -> Self {
        let mut store = ParamStore::new();
        let layers = match config.backbone {
            Backbone::Gin => {
                let mut ls = Vec::new();
                let mut width = num_drugs;
                for t in 0..config.layers {
                    let epsilon = store.add(format!("gin.{t}.eps"), Tensor::scalar(0.0));
                    let name = format!("gin.{t}.mlp");
                    let dims = [width, config.dim, config.dim];
                    let mlp = if t + 1 < config.layers {
                        Mlp::with_normalized_output(&mut store, &name, &dims, Activation::Relu, rng)
                    } else {
                        Mlp::new(&mut store, &name, &dims, Activation::Relu, true, rng)
                    };
                    ls.push(GinLayer { epsilon, mlp });
                    width = config.dim;
                }
                Layers::Gin(ls)
            }
            Backbone::Sgcn => {
                let path = config.dim / 2;
                let mut ls = Vec::new();
                let mut width = num_drugs;
                for t in 0..config.layers {
                    let w_balanced = store.add_uniform(format!("sgcn.{t}.w_b"), 3 * width, path, 3 * width, rng);
                    let w_unbalanced = store.add_uniform(format!("sgcn.{t}.w_u"), 3 * width, path, 3 * width, rng);
                    ls.push(SgcnLayer {
                        w_balanced,
                        w_unbalanced,
                        activation: Activation::Tanh,
                        in_width: width,
                    });
                    width = path;
                }
                Layers::Sgcn(ls)
            }
        };
        Self {
            store,
            layers,
            num_drugs,
            dim: config.dim,
        }
    }

    /// Forward pass producing the `|V| × dim` embedding node. Returns batch
    /// statistics for every normalised layer in training mode.
    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        structure: &DdiStructure,
        training: bool,
    ) -> Result<(Var, Vec<Vec<Option<ColumnStats>>>)> {
        let x = tape.constant(Tensor::identity(self.num_drugs));
        match &self.layers {
            Layers::Gin(layers) => gin_layers_forward(tape, vars, structure, layers, x, training),
            Layers::Sgcn(layers) => Ok((sgcn_layers_forward(tape, vars, structure, layers, x)?, Vec::new())),
        }
    }

    /// Mean squared error of inner-product scores against edge signs.
    pub fn loss(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        structure: &DdiStructure,
        edges: &[DdiEdge],
        training: bool,
    ) -> Result<(Var, Vec<Vec<Option<ColumnStats>>>)> {
        let (z, stats) = self.forward(tape, vars, structure, training)?;
        let us: Vec<usize> = edges.iter().map(|e| e.u).collect();
        let vs: Vec<usize> = edges.iter().map(|e| e.v).collect();
        let zu = tape.gather_rows(z, us)?;
        let zv = tape.gather_rows(z, vs)?;
        let scores = tape.row_dot(zu, zv)?;
        let target = Tensor::column(edges.iter().map(|e| f64::from(e.sign.value())).collect());
        Ok((tape.mse(scores, target)?, stats))
    }

    fn update_running(&mut self, stats: &[Vec<Option<ColumnStats>>], momentum: f64) {
        if let Layers::Gin(layers) = &mut self.layers {
            for (layer, s) in layers.iter_mut().zip(stats) {
                layer.mlp.update_running(s, momentum);
            }
        }
    }

    /// Inference-mode embeddings.
    pub fn embed(&self, structure: &DdiStructure) -> Result<DdiEmbeddings> {
        let mut tape = Tape::new();
        let vars = self.store.bind_constant(&mut tape);
        let (z, _) = self.forward(&mut tape, &vars, structure, false)?;
        Ok(DdiEmbeddings {
            z: tape.value(z).clone(),
        })
    }
}

fn gin_layers_forward(
    tape: &mut Tape,
    vars: &[Var],
    structure: &DdiStructure,
    layers: &[GinLayer],
    input: Var,
    training: bool,
) -> Result<(Var, Vec<Vec<Option<ColumnStats>>>)> {
    let mut z = input;
    let mut all_stats = Vec::new();
    for layer in layers {
        let agg = tape.mix(structure.any_mean.clone(), z)?;
        let scaled = tape.scale_by(vars[layer.epsilon.0], z)?;
        let own = tape.add(z, scaled)?;
        let pre = tape.add(own, agg)?;
        let (h, stats) = layer.mlp.forward(tape, vars, pre, training)?;
        all_stats.push(stats);
        z = h;
    }
    Ok((z, all_stats))
}

fn sgcn_layers_forward(
    tape: &mut Tape,
    vars: &[Var],
    structure: &DdiStructure,
    layers: &[SgcnLayer],
    input: Var,
) -> Result<Var> {
    let (mut hb, mut hu) = (input, input);
    for layer in layers {
        let syn_b = tape.mix(structure.synergy_mean.clone(), hb)?;
        let ant_u = tape.mix(structure.antagonism_mean.clone(), hu)?;
        let syn_u = tape.mix(structure.synergy_mean.clone(), hu)?;
        let ant_b = tape.mix(structure.antagonism_mean.clone(), hb)?;
        let cat_b = tape.concat_cols(&[syn_b, ant_u, hb])?;
        let cat_u = tape.concat_cols(&[syn_u, ant_b, hu])?;
        let pre_b = tape.matmul(cat_b, vars[layer.w_balanced.0])?;
        let pre_u = tape.matmul(cat_u, vars[layer.w_unbalanced.0])?;
        hb = layer.activation.apply(tape, pre_b);
        hu = layer.activation.apply(tape, pre_u);
    }
    tape.concat_cols(&[hb, hu])
}

/// GIN propagation of `embeddings` through `layers` (inference mode).
pub fn gin_forward(
    graph: &DdiGraph,
    embeddings: &Tensor,
    layers: &[GinLayer],
    store: &ParamStore,
) -> Result<DdiEmbeddings> {
    let structure = DdiStructure::new(graph);
    let mut tape = Tape::new();
    let vars = store.bind_constant(&mut tape);
    let x = tape.constant(embeddings.clone());
    let (z, _) = gin_layers_forward(&mut tape, &vars, &structure, layers, x, false)?;
    Ok(DdiEmbeddings {
        z: tape.value(z).clone(),
    })
}

/// SGCN propagation; the returned width is twice the per-path width.
pub fn sgcn_forward(
    graph: &DdiGraph,
    embeddings: &Tensor,
    layers: &[SgcnLayer],
    store: &ParamStore,
) -> Result<DdiEmbeddings> {
    let structure = DdiStructure::new(graph);
    let mut tape = Tape::new();
    let vars = store.bind_constant(&mut tape);
    let x = tape.constant(embeddings.clone());
    let z = sgcn_layers_forward(&mut tape, &vars, &structure, layers, x)?;
    Ok(DdiEmbeddings {
        z: tape.value(z).clone(),
    })
}

#[derive(Debug, Clone)]
pub struct TrainedDdiGcn {
    pub model: DdiGcn,
    pub embeddings: DdiEmbeddings,
    pub loss_curve: Vec<f64>,
}

/// Trains on every edge of `graph` (which should already contain sampled
/// neutral pairs). GIN aggregates over all of them; SGCN only over signed
/// neighbours.
pub fn train_ddigcn(graph: &DdiGraph, config: &DdiGcnConfig) -> Result<TrainedDdiGcn> {
    let mut rng = stage_rng(config.seed, "ddigcn.init");
    let model = DdiGcn::new(graph.num_drugs(), config, &mut rng);
    train_ddigcn_from(model, graph, config)
}

/// Same as [`train_ddigcn`] starting from a given model.
pub fn train_ddigcn_from(mut model: DdiGcn, graph: &DdiGraph, config: &DdiGcnConfig) -> Result<TrainedDdiGcn> {
    let structure = DdiStructure::new(graph);
    let edges = graph.edges().to_vec();
    if edges.is_empty() {
        return Err(Error::Argument("DDI graph has no edges to train on".into()));
    }
    let mut adam = AdamState::new(config.lr, model.store.values());
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut tape = Tape::new();
        let vars = model.store.bind(&mut tape);
        let (loss, stats) = model.loss(&mut tape, &vars, &structure, &edges, true)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Divergence {
                stage: "ddigcn".into(),
                epoch,
            });
        }
        curve.push(value);
        let grads = tape.backward(loss);
        let g: Vec<Tensor> = vars.iter().map(|v| grads.get(*v)).collect();
        adam.step(model.store.values_mut(), &g).map_err(|e| match e {
            Error::Divergence { .. } => Error::Divergence {
                stage: "ddigcn".into(),
                epoch,
            },
            other => other,
        })?;
        model.update_running(&stats, config.bn_momentum);
    }
    // Freeze normalisation statistics at the full-graph values of the final
    // parameters so inference reproduces the training-mode output.
    let mut tape = Tape::new();
    let vars = model.store.bind_constant(&mut tape);
    let (_, stats) = model.forward(&mut tape, &vars, &structure, true)?;
    model.update_running(&stats, 1.0);
    let embeddings = model.embed(&structure)?;
    Ok(TrainedDdiGcn {
        model,
        embeddings,
        loss_curve: curve,
    })
}

/// Mean predicted score over edges of `sign`.
pub fn mean_score(emb: &DdiEmbeddings, graph: &DdiGraph, sign: EdgeSign) -> Option<f64> {
    let scores: Vec<f64> = graph
        .edges()
        .iter()
        .filter(|e| e.sign == sign)
        .map(|e| emb.score(e.u, e.v))
        .collect();
    (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ddigraph::sample_zero_edges;
    use crate::numkit::{grad_check, Linear};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_gin_layer(store: &mut ParamStore, n: usize) -> GinLayer {
        let epsilon = store.add("eps", Tensor::scalar(0.0));
        let weight = store.add("w", Tensor::identity(n));
        let bias = Some(store.add("b", Tensor::zeros(1, n)));
        GinLayer {
            epsilon,
            mlp: Mlp {
                layers: vec![Linear {
                    weight,
                    bias,
                    fan_in: n,
                    fan_out: n,
                }],
                activation: Activation::Linear,
                activate_output: false,
                norms: vec![None],
            },
        }
    }

    #[test]
    fn isolated_drug_is_a_fixed_point() {
        let g = DdiGraph::with_one_hot_drugs(1);
        let mut store = ParamStore::new();
        let layer = identity_gin_layer(&mut store, 1);
        let x = Tensor::scalar(0.7);
        let out = gin_forward(&g, &x, &[layer], &store).unwrap();
        assert_eq!(out.z, x);
    }

    #[test]
    fn single_edge_adds_neighbour() {
        let mut g = DdiGraph::with_one_hot_drugs(2);
        g.add_edge(0, 1, EdgeSign::Synergy).unwrap();
        let mut store = ParamStore::new();
        let layer = identity_gin_layer(&mut store, 2);
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![-0.5, 3.0]]).unwrap();
        let out = gin_forward(&g, &x, &[layer], &store).unwrap();
        assert_eq!(out.z.row(0), &[0.5, 5.0]);
        assert_eq!(out.z.row(1), &[0.5, 5.0]);
    }

    fn sgcn_layer(store: &mut ParamStore, w_b: Tensor, w_u: Tensor, in_width: usize) -> SgcnLayer {
        SgcnLayer {
            w_balanced: store.add("wb", w_b),
            w_unbalanced: store.add("wu", w_u),
            activation: Activation::Linear,
            in_width,
        }
    }

    /// Selector weights that pick block `block` (0 = synergy mean,
    /// 1 = antagonism mean, 2 = self) of a `3·w` concatenation.
    fn selector(w: usize, block: usize) -> Tensor {
        let mut t = Tensor::zeros(3 * w, w);
        for i in 0..w {
            t.set(block * w + i, i, 1.0);
        }
        t
    }

    #[test]
    fn sgcn_isolated_drug_uses_only_self_block() {
        let g = DdiGraph::with_one_hot_drugs(1);
        let mut store = ParamStore::new();
        let layer = sgcn_layer(&mut store, selector(1, 2), selector(1, 0), 1);
        let out = sgcn_forward(&g, &Tensor::scalar(2.0), &[layer], &store).unwrap();
        assert_eq!(out.z.data(), &[2.0, 0.0]);
    }

    #[test]
    fn sgcn_antagonism_slot_reads_unbalanced_path() {
        // Layer one builds distinct hB/hU; layer two selects the antagonism
        // block of the balanced update, which must hold the neighbour's hU.
        let mut g = DdiGraph::with_one_hot_drugs(2);
        g.add_edge(0, 1, EdgeSign::Antagonism).unwrap();
        let mut store = ParamStore::new();
        let mut wb1 = selector(2, 2);
        let mut wu1 = selector(2, 2);
        for t in [&mut wb1, &mut wu1] {
            *t = t.map(|v| v);
        }
        wu1 = wu1.map(|v| 3.0 * v);
        let l1 = sgcn_layer(&mut store, wb1, wu1, 2);
        let l2 = sgcn_layer(&mut store, selector(2, 1), selector(2, 1), 2);
        let out = sgcn_forward(&g, &Tensor::identity(2), &[l1, l2], &store).unwrap();
        // after layer 1: hB = I, hU = 3I. Drug 0's balanced update takes the
        // antagonist's hU = 3·e1; its unbalanced update takes the antagonist's hB = e1.
        assert_eq!(out.z.row(0), &[0.0, 3.0, 0.0, 1.0]);
        assert_eq!(out.z.cols(), 4);
    }

    #[test]
    fn edge_score_cases() {
        assert_eq!(edge_score(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        assert_eq!(edge_score(&[0.0, 1.0], &[0.0, 1.0]), 1.0);
        assert_eq!(edge_score(&[1.0, 2.0], &[3.0, -1.0]), 1.0);
        let (a, b) = ([0.3, -1.7, 2.2], [1.1, 0.4, -0.9]);
        assert_eq!(edge_score(&a, &b), edge_score(&b, &a));
    }

    fn six_drug_graph() -> DdiGraph {
        let mut g = DdiGraph::with_one_hot_drugs(6);
        for (u, v, s) in [
            (0, 1, EdgeSign::Synergy),
            (1, 2, EdgeSign::Synergy),
            (0, 2, EdgeSign::Synergy),
            (3, 4, EdgeSign::Synergy),
            (2, 3, EdgeSign::Antagonism),
            (0, 4, EdgeSign::Antagonism),
            (1, 5, EdgeSign::Neutral),
            (4, 5, EdgeSign::Neutral),
        ] {
            g.add_edge(u, v, s).unwrap();
        }
        g
    }

    fn small_config(backbone: Backbone) -> DdiGcnConfig {
        DdiGcnConfig {
            backbone,
            dim: 8,
            ..DdiGcnConfig::default()
        }
    }

    /// Loops-only GIN forward in training mode (batch statistics), used to
    /// cross-check the tape implementation.
    fn straight_line_gin(model: &DdiGcn, g: &DdiGraph) -> Tensor {
        let Layers::Gin(layers) = &model.layers else {
            unreachable!()
        };
        let n = g.num_drugs();
        let st = &model.store;
        let bn = |x: &mut Vec<Vec<f64>>, gamma: &Tensor, beta: &Tensor| {
            let c = x[0].len();
            for j in 0..c {
                let m = x.iter().map(|r| r[j]).sum::<f64>() / n as f64;
                let v = x.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n as f64;
                for r in x.iter_mut() {
                    r[j] = (r[j] - m) / (v + 1e-5).sqrt() * gamma.get(0, j) + beta.get(0, j);
                }
            }
        };
        let linear = |x: &[Vec<f64>], w: &Tensor| -> Vec<Vec<f64>> {
            x.iter()
                .map(|row| {
                    (0..w.cols())
                        .map(|k| row.iter().enumerate().map(|(i, v)| v * w.get(i, k)).sum::<f64>())
                        .collect()
                })
                .collect()
        };
        let mut z: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(i == j)).collect()).collect();
        for layer in layers {
            let eps = st.get(layer.epsilon).item();
            let pre: Vec<Vec<f64>> = (0..n)
                .map(|v| {
                    let ns = g.neighbors(v);
                    (0..z[v].len())
                        .map(|j| {
                            let mean = if ns.is_empty() {
                                0.0
                            } else {
                                ns.iter().map(|&u| z[u][j]).sum::<f64>() / ns.len() as f64
                            };
                            (1.0 + eps) * z[v][j] + mean
                        })
                        .collect()
                })
                .collect();
            let mut h = pre;
            for (l, lin) in layer.mlp.layers.iter().enumerate() {
                h = linear(&h, st.get(lin.weight));
                if let Some(b) = lin.bias {
                    h.iter_mut()
                        .for_each(|r| r.iter_mut().enumerate().for_each(|(k, v)| *v += st.get(b).get(0, k)));
                }
                if let Some(norm) = &layer.mlp.norms[l] {
                    bn(&mut h, st.get(norm.gamma), st.get(norm.beta));
                    h.iter_mut().flatten().for_each(|v| *v = v.max(0.0));
                }
            }
            z = h;
        }
        Tensor::from_rows(&z).unwrap()
    }

    #[test]
    fn three_layer_gin_matches_straight_line_version() {
        let g = six_drug_graph();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let model = DdiGcn::new(6, &small_config(Backbone::Gin), &mut rng);
        let structure = DdiStructure::new(&g);
        let mut tape = Tape::new();
        let vars = model.store.bind_constant(&mut tape);
        let (z, _) = model.forward(&mut tape, &vars, &structure, true).unwrap();
        let want = straight_line_gin(&model, &g);
        assert!(tape.value(z).max_abs_diff(&want) < 1e-12);
    }

    fn loss_gradient_error(backbone: Backbone) -> f64 {
        let g = six_drug_graph();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = DdiGcn::new(6, &small_config(backbone), &mut rng);
        let structure = DdiStructure::new(&g);
        let edges = g.edges().to_vec();
        grad_check(
            |tape, vars| Ok(model.loss(tape, vars, &structure, &edges, true)?.0),
            model.store.values(),
            1e-5,
        )
        .unwrap()
    }

    #[test]
    fn gin_loss_gradient_matches_finite_differences() {
        let err = loss_gradient_error(Backbone::Gin);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn sgcn_loss_gradient_matches_finite_differences() {
        let err = loss_gradient_error(Backbone::Sgcn);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn zero_output_layer_gives_zero_loss_on_neutral_targets() {
        let mut g = DdiGraph::with_one_hot_drugs(4);
        for e in sample_zero_edges(&g.clone(), 6, 1).unwrap() {
            g.add_edge(e.u, e.v, e.sign).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = DdiGcn::new(4, &small_config(Backbone::Gin), &mut rng);
        if let Layers::Gin(layers) = &model.layers {
            let last = layers.last().unwrap().mlp.layers.last().unwrap().clone();
            *model.store.get_mut(last.weight) = Tensor::zeros(last.fan_in, last.fan_out);
            *model.store.get_mut(last.bias.unwrap()) = Tensor::zeros(1, last.fan_out);
        }
        let structure = DdiStructure::new(&g);
        let mut tape = Tape::new();
        let vars = model.store.bind(&mut tape);
        let (loss, _) = model.loss(&mut tape, &vars, &structure, g.edges(), true).unwrap();
        assert_eq!(tape.value(loss).item(), 0.0);
    }

    #[test]
    fn single_synergy_edge_is_learned() {
        let mut g = DdiGraph::with_one_hot_drugs(2);
        g.add_edge(0, 1, EdgeSign::Synergy).unwrap();
        for backbone in [Backbone::Gin, Backbone::Sgcn] {
            let cfg = DdiGcnConfig {
                backbone,
                seed: 3,
                ..DdiGcnConfig::default()
            };
            let trained = train_ddigcn(&g, &cfg).unwrap();
            let curve = &trained.loss_curve;
            if backbone == Backbone::Gin {
                for w in curve[..50].windows(2) {
                    assert!(w[1] <= w[0], "loss rose: {} -> {}", w[0], w[1]);
                }
            } else {
                // Adam overshoots once the loss is near zero; only require progress.
                assert!(curve[49] < 0.1 * curve[0]);
            }
            let score = trained.embeddings.score(0, 1);
            assert!((score - 1.0).abs() < 0.1, "{backbone:?} final score {score}");
        }
    }

    #[test]
    fn seeded_training_is_bit_identical() {
        let g = six_drug_graph();
        let cfg = DdiGcnConfig {
            backbone: Backbone::Gin,
            epochs: 30,
            seed: 8,
            ..DdiGcnConfig::default()
        };
        let a = train_ddigcn(&g, &cfg).unwrap();
        let b = train_ddigcn(&g, &cfg).unwrap();
        assert_eq!(a.loss_curve, b.loss_curve);
        assert_eq!(a.embeddings, b.embeddings);
    }

    #[test]
    fn gin_is_permutation_equivariant() {
        let mut g = DdiGraph::with_one_hot_drugs(5);
        let edges = [
            (0, 1, EdgeSign::Synergy),
            (1, 2, EdgeSign::Antagonism),
            (2, 3, EdgeSign::Synergy),
            (3, 4, EdgeSign::Neutral),
            (0, 3, EdgeSign::Synergy),
        ];
        for (u, v, s) in edges {
            g.add_edge(u, v, s).unwrap();
        }
        let perm = [3, 0, 4, 1, 2];
        let mut pg = DdiGraph::with_one_hot_drugs(5);
        for (u, v, s) in edges {
            pg.add_edge(perm[u], perm[v], s).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let model = DdiGcn::new(5, &small_config(Backbone::Gin), &mut rng);
        let mut pmodel = model.clone();
        if let Layers::Gin(layers) = &model.layers {
            let w = layers[0].mlp.layers[0].weight;
            let orig = model.store.get(w).clone();
            let target = pmodel.store.get_mut(w);
            for i in 0..5 {
                target.row_mut(perm[i]).copy_from_slice(orig.row(i));
            }
        }
        let z = model.embed(&DdiStructure::new(&g)).unwrap().z;
        let pz = pmodel.embed(&DdiStructure::new(&pg)).unwrap().z;
        for i in 0..5 {
            for (a, b) in z.row(i).iter().zip(pz.row(perm[i])) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn trained_scores_separate_synergy_from_antagonism() {
        // two synergy cliques of four joined by antagonism edges
        let mut g = DdiGraph::with_one_hot_drugs(8);
        for block in [0, 4] {
            for u in block..block + 4 {
                for v in u + 1..block + 4 {
                    g.add_edge(u, v, EdgeSign::Synergy).unwrap();
                }
            }
        }
        for (u, v) in [(0, 4), (1, 5), (2, 6), (3, 7)] {
            g.add_edge(u, v, EdgeSign::Antagonism).unwrap();
        }
        let zeros = sample_zero_edges(&g, 4, 2).unwrap();
        let g = g.with_edges(&zeros).unwrap();
        for backbone in [Backbone::Gin, Backbone::Sgcn] {
            let cfg = DdiGcnConfig {
                backbone,
                epochs: 200,
                seed: 5,
                ..DdiGcnConfig::default()
            };
            let emb = train_ddigcn(&g, &cfg).unwrap().embeddings;
            let pos = mean_score(&emb, &g, EdgeSign::Synergy).unwrap();
            let neg = mean_score(&emb, &g, EdgeSign::Antagonism).unwrap();
            assert!(pos > neg, "{backbone:?}: {pos} <= {neg}");
        }
    }

    #[test]
    fn embedding_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let emb = DdiEmbeddings {
            z: Tensor::from_rows(&[vec![0.25, -1.0 / 3.0], vec![7.5, 1e-9]]).unwrap(),
        };
        let p = dir.path().join("emb.csv");
        emb.write_csv(&p).unwrap();
        assert_eq!(DdiEmbeddings::read_csv(&p).unwrap(), emb);
    }
}
