//! Treatment assignment and counterfactual augmentation.
//!
//! Patients are clustered; a drug observed for one patient is considered a
//! treatment for the whole cluster, then extended over synergy edges. For
//! each (patient, drug) pair the nearest pair with the opposite treatment
//! (within distance thresholds) supplies a counterfactual outcome.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ddigraph::{Cohort, DdiGraph, Split};
use crate::error::{Error, Result};
use crate::numkit::Tensor;
use crate::seed::stage_rng;

const KMEANS_MAX_ITERS: usize = 300;

/// Dense row-major 0/1 matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryMatrix {
    rows: usize,
    cols: usize,
    data: Vec<bool>,
}

impl BinaryMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![false; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[bool] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|b| **b).count()
    }

    /// `(row, col)` of every set entry in row-major order.
    pub fn ones(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(|(k, _)| (k / self.cols, k % self.cols))
    }
}

/// Observed links of `rows` (all other patients are left empty).
pub fn observed_links(cohort: &Cohort, rows: &[usize]) -> BinaryMatrix {
    let mut y = BinaryMatrix::zeros(cohort.num_patients(), cohort.num_drugs);
    for &i in rows {
        for &d in &cohort.prescriptions[i] {
            y.set(i, d, true);
        }
    }
    y
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub centroids: Tensor,
    pub k: usize,
    /// Within-cluster sum of squares after each assignment step.
    pub objective_trace: Vec<f64>,
}

impl ClusterAssignment {
    pub fn nearest(&self, point: &[f64]) -> usize {
        nearest_centroid(&self.centroids, point).0
    }

    pub fn members(&self, c: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == c).collect()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Euclidean distance.
pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

fn nearest_centroid(centroids: &Tensor, point: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centroids.rows() {
        let d = sq_dist(centroids.row(c), point);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Within-cluster sum of squared distances.
pub fn wcss(x: &Tensor, labels: &[usize], centroids: &Tensor) -> f64 {
    (0..x.rows()).map(|i| sq_dist(x.row(i), centroids.row(labels[i]))).sum()
}

/// k-means++ seeding followed by Lloyd iterations until the assignment stops
/// changing (at most 300 rounds).
pub fn kmeans_cluster(x: &Tensor, k: usize, seed: u64) -> Result<ClusterAssignment> {
    let n = x.rows();
    if k == 0 || k > n {
        return Err(Error::Argument(format!("cannot form {k} clusters from {n} points")));
    }
    let mut rng = stage_rng(seed, "kmeans");
    let d = x.cols();
    let mut centroids = Tensor::zeros(k, d);
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from_slice(x.row(first));
    let mut closest: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), x.row(first))).collect();
    for c in 1..k {
        let total: f64 = closest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, w) in closest.iter().enumerate() {
                if target < *w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).copy_from_slice(x.row(pick));
        for (i, cl) in closest.iter_mut().enumerate() {
            *cl = cl.min(sq_dist(x.row(i), x.row(pick)));
        }
    }

    let mut labels: Vec<usize> = (0..n).map(|i| nearest_centroid(&centroids, x.row(i)).0).collect();
    let mut trace = vec![wcss(x, &labels, &centroids)];
    for _ in 0..KMEANS_MAX_ITERS {
        // update step
        let mut sums = Tensor::zeros(k, d);
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[labels[i]] += 1;
            for (s, v) in sums.row_mut(labels[i]).iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for s in sums.row_mut(c) {
                    *s /= counts[c] as f64;
                }
                centroids.row_mut(c).copy_from_slice(sums.row(c));
            }
        }
        // reseed empty clusters at the point farthest from its centroid
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = sq_dist(x.row(a), centroids.row(labels[a]));
                        let db = sq_dist(x.row(b), centroids.row(labels[b]));
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .unwrap_or(0);
                centroids.row_mut(c).copy_from_slice(x.row(far));
                labels[far] = c;
            }
        }
        let next: Vec<usize> = (0..n).map(|i| nearest_centroid(&centroids, x.row(i)).0).collect();
        let changed = next != labels;
        labels = next;
        trace.push(wcss(x, &labels, &centroids));
        if !changed {
            break;
        }
    }
    Ok(ClusterAssignment {
        labels,
        centroids,
        k,
        objective_trace: trace,
    })
}

/// Drugs treated for cluster `c` before synergy expansion: every drug
/// observed for any member of the cluster.
fn cluster_drug_sets(observed: &BinaryMatrix, clusters: &ClusterAssignment) -> Vec<Vec<bool>> {
    let mut sets = vec![vec![false; observed.cols()]; clusters.k];
    for (i, v) in observed.ones() {
        sets[clusters.labels[i]][v] = true;
    }
    sets
}

fn expand_synergy(row: &[bool], graph: &DdiGraph) -> Vec<bool> {
    let mut out = row.to_vec();
    for v in 0..row.len() {
        if row[v] {
            for &u in graph.synergy_neighbors(v) {
                out[u] = true;
            }
        }
    }
    out
}

/// Treatment row of every cluster (cluster propagation then one synergy
/// pass); a new patient takes the row of its nearest centroid.
pub fn cluster_treatments(observed: &BinaryMatrix, clusters: &ClusterAssignment, graph: &DdiGraph) -> Vec<Vec<bool>> {
    cluster_drug_sets(observed, clusters)
        .iter()
        .map(|s| expand_synergy(s, graph))
        .collect()
}

/// Three sequential passes: observed links, cluster propagation, synergy
/// expansion.
pub fn build_treatment_matrix(observed: &BinaryMatrix, clusters: &ClusterAssignment, graph: &DdiGraph) -> BinaryMatrix {
    let n = observed.rows();
    let sets = cluster_drug_sets(observed, clusters);
    let mut t = BinaryMatrix::zeros(n, observed.cols());
    for i in 0..n {
        let mut step2: Vec<bool> = observed.row(i).to_vec();
        for (v, on) in sets[clusters.labels[i]].iter().enumerate() {
            step2[v] |= *on;
        }
        for (v, on) in expand_synergy(&step2, graph).into_iter().enumerate() {
            t.set(i, v, on);
        }
    }
    t
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CfConfig {
    /// Patient distance threshold; `None` picks a percentile of training distances.
    pub gamma_p: Option<f64>,
    pub gamma_d: Option<f64>,
    pub percentile: f64,
    pub k: usize,
    pub seed: u64,
}

impl Default for CfConfig {
    fn default() -> Self {
        Self {
            gamma_p: None,
            gamma_d: None,
            percentile: 0.1,
            k: 5,
            seed: 0,
        }
    }
}

/// Nearest-rank percentile of pairwise distances among `rows` of `x`.
/// Falls back to the smallest positive distance when the percentile is 0.
pub fn distance_percentile(x: &Tensor, rows: &[usize], p: f64) -> Result<f64> {
    let mut ds = Vec::new();
    for (a, &i) in rows.iter().enumerate() {
        for &j in &rows[a + 1..] {
            ds.push(distance(x.row(i), x.row(j)));
        }
    }
    if ds.is_empty() {
        return Err(Error::Argument(
            "need at least two points for a distance percentile".into(),
        ));
    }
    ds.sort_by(f64::total_cmp);
    let rank = ((p.clamp(0.0, 1.0) * ds.len() as f64).ceil() as usize).clamp(1, ds.len());
    let v = ds[rank - 1];
    if v > 0.0 {
        return Ok(v);
    }
    ds.into_iter()
        .find(|d| *d > 0.0)
        .ok_or_else(|| Error::Argument("all points coincide".into()))
}

/// Precomputed neighbour lists for counterfactual matching.
#[derive(Debug, Clone)]
pub struct CfIndex {
    /// Per patient: `(distance, j)` for candidate patients within γ_p, sorted.
    near_patients: Vec<Vec<(f64, usize)>>,
    /// Per drug: `(distance, u)` for drugs within γ_d, sorted.
    near_drugs: Vec<Vec<(f64, usize)>>,
}

impl CfIndex {
    /// `candidates` are the patients whose outcomes may be borrowed.
    pub fn new(x: &Tensor, z: &Tensor, candidates: &[usize], gamma_p: f64, gamma_d: f64) -> Self {
        let sorted = |mut v: Vec<(f64, usize)>| {
            v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            v
        };
        let near_patients = (0..x.rows())
            .into_par_iter()
            .map(|i| {
                sorted(
                    candidates
                        .iter()
                        .map(|&j| (distance(x.row(i), x.row(j)), j))
                        .filter(|(d, _)| *d < gamma_p)
                        .collect(),
                )
            })
            .collect();
        let near_drugs = (0..z.rows())
            .map(|v| {
                sorted(
                    (0..z.rows())
                        .map(|u| (distance(z.row(v), z.row(u)), u))
                        .filter(|(d, _)| *d < gamma_d)
                        .collect(),
                )
            })
            .collect();
        Self {
            near_patients,
            near_drugs,
        }
    }

    /// Minimum-distance `(j, u)` with `T[j,u] = 1 - T[i,v]`; ties go to the
    /// lexicographically smallest pair.
    pub fn find(&self, i: usize, v: usize, t: &BinaryMatrix) -> Option<(usize, usize)> {
        let want = !t.get(i, v);
        let mut best: Option<(f64, usize, usize)> = None;
        for &(dp, j) in &self.near_patients[i] {
            if let Some((b, _, _)) = best {
                // lists are sorted, so no later patient can beat `b`
                if dp > b {
                    break;
                }
            }
            for &(dd, u) in &self.near_drugs[v] {
                if t.get(j, u) != want {
                    continue;
                }
                let total = dp + dd;
                let better = match best {
                    None => true,
                    Some((b, bj, bu)) => total < b || (total == b && (j, u) < (bj, bu)),
                };
                if better {
                    best = Some((total, j, u));
                }
            }
        }
        best.map(|(_, j, u)| (j, u))
    }
}

/// Single-query form of [`CfIndex::find`].
#[allow(clippy::too_many_arguments)]
pub fn find_counterfactual_link(
    i: usize,
    v: usize,
    t: &BinaryMatrix,
    x: &Tensor,
    z: &Tensor,
    gamma_p: f64,
    gamma_d: f64,
    candidates: &[usize],
) -> Option<(usize, usize)> {
    let mut near_p: Vec<(f64, usize)> = candidates
        .iter()
        .map(|&j| (distance(x.row(i), x.row(j)), j))
        .filter(|(d, _)| *d < gamma_p)
        .collect();
    near_p.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut near_d: Vec<(f64, usize)> = (0..z.rows())
        .map(|u| (distance(z.row(v), z.row(u)), u))
        .filter(|(d, _)| *d < gamma_d)
        .collect();
    near_d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut near_patients = vec![Vec::new(); x.rows()];
    near_patients[i] = near_p;
    let mut near_drugs = vec![Vec::new(); z.rows()];
    near_drugs[v] = near_d;
    CfIndex {
        near_patients,
        near_drugs,
    }
    .find(i, v, t)
}

/// Factual and counterfactual matrices plus the matched pair per entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentState {
    pub t: BinaryMatrix,
    pub y: BinaryMatrix,
    pub t_cf: BinaryMatrix,
    pub y_cf: BinaryMatrix,
    /// Row-major `(j, u)` per `(i, v)`, `None` when unmatched or not searched.
    pub cf_pair: Vec<Option<(usize, usize)>>,
    pub clusters: ClusterAssignment,
    pub cluster_treatments: Vec<Vec<bool>>,
    pub gamma_p: f64,
    pub gamma_d: f64,
}

impl TreatmentState {
    pub fn matched(&self, i: usize, v: usize) -> Option<(usize, usize)> {
        self.cf_pair[i * self.t.cols() + v]
    }

    pub fn num_matched(&self) -> usize {
        self.cf_pair.iter().filter(|p| p.is_some()).count()
    }

    /// Writes `matrix,patient_id,drug_id` rows for every set entry of
    /// `T`, `T_CF` and `Y_CF`.
    pub fn write_triplets(&self, path: &Path, patient_ids: &[String]) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["matrix", "patient_id", "drug_id"])?;
        for (name, m) in [("T", &self.t), ("T_CF", &self.t_cf), ("Y_CF", &self.y_cf)] {
            for (i, v) in m.ones() {
                w.write_record([name, patient_ids[i].as_str(), v.to_string().as_str()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Matched entries take the flipped treatment and the neighbour's outcome;
/// all others copy the factual values.
pub fn build_counterfactual_outcomes(
    t: &BinaryMatrix,
    y: &BinaryMatrix,
    matches: &[Option<(usize, usize)>],
) -> (BinaryMatrix, BinaryMatrix) {
    let mut t_cf = t.clone();
    let mut y_cf = y.clone();
    let cols = t.cols();
    for (k, m) in matches.iter().enumerate() {
        if let Some((j, u)) = *m {
            let (i, v) = (k / cols, k % cols);
            t_cf.set(i, v, !t.get(i, v));
            y_cf.set(i, v, y.get(j, u));
        }
    }
    (t_cf, y_cf)
}

/// Full treatment construction over a cohort. Drug features for distances
/// come from the DDI graph; matches are searched for every training patient
/// and drug, borrowing outcomes from training patients only.
pub fn build_treatment_state(cohort: &Cohort, graph: &DdiGraph, config: &CfConfig) -> Result<TreatmentState> {
    let x = &cohort.features;
    let z = graph.drug_features();
    let train = cohort.indices(Split::Train);
    let clusters = kmeans_cluster(x, config.k.min(cohort.num_patients()), config.seed)?;
    let y = observed_links(cohort, &train);
    let t = build_treatment_matrix(&y, &clusters, graph);
    let gamma_p = match config.gamma_p {
        Some(g) => g,
        None => distance_percentile(x, &train, config.percentile)?,
    };
    let all_drugs: Vec<usize> = (0..graph.num_drugs()).collect();
    let gamma_d = match config.gamma_d {
        Some(g) => g,
        None => distance_percentile(&z, &all_drugs, config.percentile)?,
    };
    if gamma_p <= 0.0 || gamma_d <= 0.0 {
        return Err(Error::Config("distance thresholds must be positive".into()));
    }
    let index = CfIndex::new(x, &z, &train, gamma_p, gamma_d);
    let nd = graph.num_drugs();
    let mut cf_pair = vec![None; cohort.num_patients() * nd];
    let found: Vec<(usize, Option<(usize, usize)>)> = train
        .par_iter()
        .flat_map_iter(|&i| (0..nd).map(move |v| (i, v)))
        .map(|(i, v)| (i * nd + v, index.find(i, v, &t)))
        .collect();
    for (k, m) in found {
        cf_pair[k] = m;
    }
    let (t_cf, y_cf) = build_counterfactual_outcomes(&t, &y, &cf_pair);
    let treatments = cluster_treatments(&y, &clusters, graph);
    Ok(TreatmentState {
        t,
        y,
        t_cf,
        y_cf,
        cf_pair,
        clusters,
        cluster_treatments: treatments,
        gamma_p,
        gamma_d,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ddigraph::EdgeSign;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn labels_of(x: &Tensor, k: usize) -> ClusterAssignment {
        kmeans_cluster(x, k, 7).unwrap()
    }

    #[test]
    fn single_cluster_centroid_is_mean() {
        let x = Tensor::from_rows(&[vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, -1.0]]).unwrap();
        let c = labels_of(&x, 1);
        assert_eq!(c.centroids.row(0), &[2.0, 1.0]);
        assert_eq!(c.labels, vec![0, 0, 0]);
    }

    #[test]
    fn separated_pairs_form_clusters() {
        let x = Tensor::from_rows(&[vec![0.0, 0.0], vec![10.0, 10.0], vec![0.1, 0.0], vec![10.0, 10.2]]).unwrap();
        let c = labels_of(&x, 2);
        assert_eq!(c.labels[0], c.labels[2]);
        assert_eq!(c.labels[1], c.labels[3]);
        assert_ne!(c.labels[0], c.labels[1]);
    }

    /// Best within-cluster sum of squares over all 2-partitions.
    fn brute_force_two_partition(x: &Tensor) -> f64 {
        let n = x.rows();
        let mut best = f64::INFINITY;
        for mask in 1u32..(1 << n) - 1 {
            let mut cost = 0.0;
            for side in [true, false] {
                let members: Vec<usize> = (0..n).filter(|&i| ((mask >> i) & 1 == 1) == side).collect();
                let d = x.cols();
                let mean: Vec<f64> = (0..d)
                    .map(|c| members.iter().map(|&i| x.get(i, c)).sum::<f64>() / members.len() as f64)
                    .collect();
                cost += members.iter().map(|&i| sq_dist(x.row(i), &mean)).sum::<f64>();
            }
            best = best.min(cost);
        }
        best
    }

    #[test]
    fn five_points_reach_optimal_two_partition() {
        let x = Tensor::from_rows(&[
            vec![0.0, 0.0],
            vec![1.0, 0.5],
            vec![0.5, 1.0],
            vec![6.0, 5.0],
            vec![5.5, 6.5],
        ])
        .unwrap();
        let c = labels_of(&x, 2);
        let got = wcss(&x, &c.labels, &c.centroids);
        assert!((got - brute_force_two_partition(&x)).abs() < 1e-12);
    }

    #[test]
    fn kmeans_rejects_too_many_clusters() {
        assert!(kmeans_cluster(&Tensor::zeros(2, 1), 3, 0).is_err());
    }

    proptest! {
        #[test]
        fn kmeans_objective_never_increases(seed in 0u64..500, n in 3usize..30, k in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = k.min(n);
            let x = Tensor::matrix(n, 3, (0..n * 3).map(|_| rng.random_range(-5.0..5.0)).collect()).unwrap();
            let c = kmeans_cluster(&x, k, seed).unwrap();
            for w in c.objective_trace.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9, "{:?}", c.objective_trace);
            }
            prop_assert!(c.labels.iter().all(|&l| l < k));
        }
    }

    fn fixed_clusters(labels: Vec<usize>, k: usize) -> ClusterAssignment {
        ClusterAssignment {
            labels,
            centroids: Tensor::zeros(k, 1),
            k,
            objective_trace: vec![],
        }
    }

    fn ones(m: &BinaryMatrix) -> Vec<(usize, usize)> {
        m.ones().collect()
    }

    #[test]
    fn no_propagation_keeps_observed_links() {
        let mut y = BinaryMatrix::zeros(3, 3);
        y.set(0, 1, true);
        y.set(2, 0, true);
        let g = DdiGraph::with_one_hot_drugs(3);
        let t = build_treatment_matrix(&y, &fixed_clusters(vec![0, 1, 2], 3), &g);
        assert_eq!(t, y);
    }

    #[test]
    fn three_step_hand_trace() {
        // drugs A=0, B=1, C=2; patients 0 and 1 share a cluster
        let mut y = BinaryMatrix::zeros(3, 3);
        y.set(0, 0, true);
        let mut g = DdiGraph::with_one_hot_drugs(3);
        g.add_edge(0, 1, EdgeSign::Synergy).unwrap();
        g.add_edge(0, 2, EdgeSign::Antagonism).unwrap();
        let t = build_treatment_matrix(&y, &fixed_clusters(vec![0, 0, 1], 2), &g);
        assert!(t.get(1, 0));
        assert!(t.get(0, 1) && t.get(1, 1));
        assert!(!t.get(0, 2) && !t.get(1, 2) && !t.get(2, 2));
        assert_eq!(ones(&t), vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
    }

    #[test]
    fn synergy_expansion_is_a_single_pass() {
        // chain A-B-C: A observed gives B, but not C
        let mut y = BinaryMatrix::zeros(1, 3);
        y.set(0, 0, true);
        let mut g = DdiGraph::with_one_hot_drugs(3);
        g.add_edge(0, 1, EdgeSign::Synergy).unwrap();
        g.add_edge(1, 2, EdgeSign::Synergy).unwrap();
        let t = build_treatment_matrix(&y, &fixed_clusters(vec![0], 1), &g);
        assert_eq!(ones(&t), vec![(0, 0), (0, 1)]);
    }

    /// Exhaustive search over every (j, u).
    #[allow(clippy::too_many_arguments)]
    fn oracle(
        i: usize,
        v: usize,
        t: &BinaryMatrix,
        x: &Tensor,
        z: &Tensor,
        gp: f64,
        gd: f64,
        cands: &[usize],
    ) -> Option<(usize, usize)> {
        let mut best: Option<(f64, usize, usize)> = None;
        for &j in cands {
            for u in 0..z.rows() {
                let dp = x
                    .row(i)
                    .iter()
                    .zip(x.row(j))
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let dd = z
                    .row(v)
                    .iter()
                    .zip(z.row(u))
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                if t.get(j, u) == t.get(i, v) || dp >= gp || dd >= gd {
                    continue;
                }
                let s = dp + dd;
                if best.is_none_or(|(b, bj, bu)| s < b || (s == b && (j, u) < (bj, bu))) {
                    best = Some((s, j, u));
                }
            }
        }
        best.map(|(_, j, u)| (j, u))
    }

    fn random_instance(seed: u64, n: usize, m: usize) -> (BinaryMatrix, Tensor, Tensor) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = BinaryMatrix::zeros(n, m);
        for i in 0..n {
            for v in 0..m {
                t.set(i, v, rng.random_bool(0.4));
            }
        }
        let x = Tensor::matrix(n, 2, (0..n * 2).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let z = Tensor::matrix(m, 2, (0..m * 2).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        (t, x, z)
    }

    #[test]
    fn zero_thresholds_never_match() {
        let (t, x, z) = random_instance(1, 4, 3);
        let cands: Vec<usize> = (0..4).collect();
        for i in 0..4 {
            for v in 0..3 {
                assert_eq!(find_counterfactual_link(i, v, &t, &x, &z, 0.0, 0.0, &cands), None);
            }
        }
    }

    #[test]
    fn toy_three_by_two_matches_oracle() {
        let (t, x, z) = random_instance(2, 3, 2);
        let cands = [0, 1, 2];
        for i in 0..3 {
            for v in 0..2 {
                let got = find_counterfactual_link(i, v, &t, &x, &z, 10.0, 10.0, &cands);
                assert_eq!(got, oracle(i, v, &t, &x, &z, 10.0, 10.0, &cands));
                if let Some((j, u)) = got {
                    assert_ne!((j, u), (i, v));
                }
            }
        }
    }

    proptest! {
        #[test]
        fn index_matches_exhaustive_search(seed in 0u64..10_000, n in 1usize..20, m in 1usize..10, gp in 0.05f64..1.5, gd in 0.05f64..1.5) {
            let (t, x, z) = random_instance(seed, n, m);
            let cands: Vec<usize> = (0..n).filter(|j| j % 3 != 1).collect();
            let index = CfIndex::new(&x, &z, &cands, gp, gd);
            for i in 0..n {
                for v in 0..m {
                    prop_assert_eq!(index.find(i, v, &t), oracle(i, v, &t, &x, &z, gp, gd, &cands));
                }
            }
        }
    }

    #[test]
    fn outcomes_fallback_and_flip() {
        let mut t = BinaryMatrix::zeros(2, 2);
        let mut y = BinaryMatrix::zeros(2, 2);
        t.set(0, 0, true);
        y.set(1, 1, true);
        let (tc, yc) = build_counterfactual_outcomes(&t, &y, &[None; 4]);
        assert_eq!((tc, yc), (t.clone(), y.clone()));

        let mut matches = vec![None; 4];
        matches[0] = Some((1, 1));
        let (tc, yc) = build_counterfactual_outcomes(&t, &y, &matches);
        assert!(!tc.get(0, 0));
        assert!(yc.get(0, 0));
        assert_eq!(tc.get(1, 1), t.get(1, 1));
    }

    proptest! {
        #[test]
        fn counterfactual_treatment_flips_only_matched(seed in 0u64..1000) {
            let (t, x, z) = random_instance(seed, 8, 5);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let mut y = BinaryMatrix::zeros(8, 5);
            for i in 0..8 { for v in 0..5 { y.set(i, v, rng.random_bool(0.3)); } }
            let cands: Vec<usize> = (0..8).collect();
            let index = CfIndex::new(&x, &z, &cands, 0.6, 0.6);
            let matches: Vec<_> = (0..40).map(|k| index.find(k / 5, k % 5, &t)).collect();
            let (tc, yc) = build_counterfactual_outcomes(&t, &y, &matches);
            for k in 0..40 {
                let (i, v) = (k / 5, k % 5);
                match matches[k] {
                    Some((j, u)) => {
                        prop_assert_eq!(tc.get(i, v), !t.get(i, v));
                        prop_assert_eq!(yc.get(i, v), y.get(j, u));
                        prop_assert_eq!(t.get(j, u), !t.get(i, v));
                    }
                    None => {
                        prop_assert_eq!(tc.get(i, v), t.get(i, v));
                        prop_assert_eq!(yc.get(i, v), y.get(i, v));
                    }
                }
            }
        }

        #[test]
        fn treatment_dominates_observed(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (n, m) = (10, 6);
            let mut y = BinaryMatrix::zeros(n, m);
            for i in 0..n { for v in 0..m { y.set(i, v, rng.random_bool(0.2)); } }
            let mut g = DdiGraph::with_one_hot_drugs(m);
            for u in 0..m { for v in u + 1..m {
                match rng.random_range(0..4) {
                    0 => g.add_edge(u, v, EdgeSign::Synergy).unwrap(),
                    1 => g.add_edge(u, v, EdgeSign::Antagonism).unwrap(),
                    _ => {}
                }
            } }
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
            let clusters = fixed_clusters(labels.clone(), 3);
            let t = build_treatment_matrix(&y, &clusters, &g);
            let rows = cluster_treatments(&y, &clusters, &g);
            for i in 0..n {
                for v in 0..m {
                    prop_assert!(!y.get(i, v) || t.get(i, v));
                }
                prop_assert_eq!(t.row(i), rows[labels[i]].as_slice());
            }
        }
    }

    #[test]
    fn percentile_uses_nearest_rank() {
        let x = Tensor::column(vec![0.0, 1.0, 3.0, 6.0]);
        // pairwise: 1,2,3,3,5,6
        assert_eq!(distance_percentile(&x, &[0, 1, 2, 3], 0.1).unwrap(), 1.0);
        assert_eq!(distance_percentile(&x, &[0, 1, 2, 3], 0.5).unwrap(), 3.0);
        assert_eq!(distance_percentile(&x, &[0, 1, 2, 3], 1.0).unwrap(), 6.0);
    }

    #[test]
    fn triplet_export_lists_every_set_entry() {
        let mut t = BinaryMatrix::zeros(2, 2);
        t.set(1, 0, true);
        let state = TreatmentState {
            t: t.clone(),
            y: BinaryMatrix::zeros(2, 2),
            t_cf: BinaryMatrix::zeros(2, 2),
            y_cf: t.clone(),
            cf_pair: vec![None; 4],
            clusters: fixed_clusters(vec![0, 0], 1),
            cluster_treatments: vec![],
            gamma_p: 1.0,
            gamma_d: 1.0,
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        state.write_triplets(&p, &["p0".into(), "p1".into()]).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        assert_eq!(text, "matrix,patient_id,drug_id\nT,p1,0\nY_CF,p1,0\n");
    }
}
