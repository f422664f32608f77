use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use super::graph::{SignedGraph, Subgraph};
use super::truss::TrussIndex;
use crate::error::{Error, Result};

/// Edge length used for Steiner construction; denser edges are shorter.
pub fn truss_weight(truss: usize) -> f64 {
    1.0 / (truss.max(2) as f64 - 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteinerTree {
    pub nodes: BTreeSet<usize>,
    /// `(u, v)` with `u < v`, ascending.
    pub edges: Vec<(usize, usize)>,
    pub weight: f64,
}

impl SteinerTree {
    pub fn to_subgraph(&self) -> Subgraph {
        let mut s = Subgraph::from_edges(self.edges.iter().copied());
        for &v in &self.nodes {
            s.add_node(v);
        }
        s
    }
}

/// One tree per connected group of query nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct SteinerForest {
    pub trees: Vec<SteinerTree>,
    pub multi_component: bool,
}

fn weight_of(index: &TrussIndex, u: usize, v: usize) -> f64 {
    truss_weight(index.get(u, v).unwrap_or(2))
}

/// Dijkstra distances and predecessors from `src`. Heap keys use the bit
/// pattern of non-negative floats, which orders like the values.
fn dijkstra(graph: &SignedGraph, index: &TrussIndex, src: usize) -> (BTreeMap<usize, f64>, BTreeMap<usize, usize>) {
    let mut dist = BTreeMap::from([(src, 0.0)]);
    let mut pred = BTreeMap::new();
    let mut done = BTreeSet::new();
    let mut heap = BinaryHeap::from([Reverse((0f64.to_bits(), src))]);
    while let Some(Reverse((bits, u))) = heap.pop() {
        if !done.insert(u) {
            continue;
        }
        let du = f64::from_bits(bits);
        for w in graph.neighbors(u) {
            let nd = du + weight_of(index, u, w);
            if dist.get(&w).is_none_or(|&d| nd < d) {
                dist.insert(w, nd);
                pred.insert(w, u);
                heap.push(Reverse((nd.to_bits(), w)));
            }
        }
    }
    (dist, pred)
}

/// Kruskal over `(weight, u, v)` edges; returns chosen edges.
fn kruskal(mut edges: Vec<(f64, usize, usize)>) -> Vec<(f64, usize, usize)> {
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut parent: BTreeMap<usize, usize> = BTreeMap::new();
    fn find(parent: &mut BTreeMap<usize, usize>, x: usize) -> usize {
        let p = *parent.entry(x).or_insert(x);
        if p == x {
            return x;
        }
        let r = find(parent, p);
        parent.insert(x, r);
        r
    }
    let mut out = Vec::new();
    for (w, u, v) in edges {
        let (ru, rv) = (find(&mut parent, u), find(&mut parent, v));
        if ru != rv {
            parent.insert(ru, rv);
            out.push((w, u, v));
        }
    }
    out
}

/// Tree for a query set already known to be connected.
fn connected_tree(graph: &SignedGraph, index: &TrussIndex, query: &[usize]) -> SteinerTree {
    if query.len() == 1 {
        return SteinerTree {
            nodes: BTreeSet::from([query[0]]),
            edges: Vec::new(),
            weight: 0.0,
        };
    }
    let runs: Vec<_> = query.iter().map(|&q| dijkstra(graph, index, q)).collect();
    // distance graph over the query, then its minimum spanning tree
    let mut closure = Vec::new();
    for a in 0..query.len() {
        for b in a + 1..query.len() {
            closure.push((runs[a].0[&query[b]], a, b));
        }
    }
    let mut expanded = BTreeSet::new();
    for (_, a, b) in kruskal(closure) {
        let pred = &runs[a].1;
        let mut cur = query[b];
        while cur != query[a] {
            let p = pred[&cur];
            expanded.insert((p.min(cur), p.max(cur)));
            cur = p;
        }
    }
    let tree_edges = kruskal(
        expanded
            .into_iter()
            .map(|(u, v)| (weight_of(index, u, v), u, v))
            .collect(),
    );
    let mut tree = Subgraph::from_edges(tree_edges.iter().map(|&(_, u, v)| (u, v)));
    let keep: BTreeSet<usize> = query.iter().copied().collect();
    loop {
        let leaves: Vec<usize> = tree
            .nodes()
            .filter(|v| !keep.contains(v) && tree.degree(*v) <= 1)
            .collect();
        if leaves.is_empty() {
            break;
        }
        for v in leaves {
            tree.remove_node(v);
        }
    }
    let edges = tree.edges();
    let weight = edges.iter().map(|&(u, v)| weight_of(index, u, v)).sum();
    SteinerTree {
        nodes: tree.nodes().collect(),
        edges,
        weight,
    }
}

/// Approximate minimum Steiner tree under truss distance: shortest-path
/// closure over the query, its MST, path expansion, a second MST and
/// pruning of non-query leaves. Query nodes in different components get
/// separate trees and `multi_component` is set.
pub fn steiner_tree(graph: &SignedGraph, index: &TrussIndex, query: &[usize]) -> Result<SteinerForest> {
    let query: BTreeSet<usize> = query.iter().copied().collect();
    if query.is_empty() {
        return Err(Error::Argument("empty query".into()));
    }
    if let Some(&bad) = query.iter().find(|&&q| q >= graph.num_nodes()) {
        return Err(Error::UnknownDrug(bad));
    }
    let whole = graph.to_subgraph();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut seen = BTreeSet::new();
    for &q in &query {
        if seen.contains(&q) {
            continue;
        }
        let comp = whole.component(q);
        let group: Vec<usize> = query.iter().copied().filter(|v| comp.contains(v)).collect();
        seen.extend(group.iter().copied());
        groups.push(group);
    }
    Ok(SteinerForest {
        multi_component: groups.len() > 1,
        trees: groups.iter().map(|g| connected_tree(graph, index, g)).collect(),
    })
}
