use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::graph::{SignedGraph, Subgraph};
use super::ss::suggestion_satisfaction;
use super::steiner::steiner_tree;
use super::truss::{truss_numbers, TrussIndex};
use crate::error::{Error, Result};

/// Expansion size bound for a query of `q` drugs.
pub fn default_n0(q: usize) -> usize {
    (4 * q).max(30)
}

/// A connected p-truss around the query.
#[derive(Debug, Clone, PartialEq)]
pub struct Community {
    pub graph: Subgraph,
    pub p: usize,
    pub query_distance: usize,
    pub diameter: usize,
}

fn dedup_query(graph: &SignedGraph, query: &[usize]) -> Result<Vec<usize>> {
    let q: BTreeSet<usize> = query.iter().copied().collect();
    if q.is_empty() {
        return Err(Error::Argument("empty query".into()));
    }
    if let Some(&bad) = q.iter().find(|&&v| v >= graph.num_nodes()) {
        return Err(Error::UnknownDrug(bad));
    }
    Ok(q.into_iter().collect())
}

fn singleton(v: usize) -> Community {
    let mut g = Subgraph::default();
    g.add_node(v);
    Community {
        graph: g,
        p: 2,
        query_distance: 0,
        diameter: 0,
    }
}

/// Component of `g` holding the query, or `None` when the query is split or
/// partly missing.
fn query_component(g: &Subgraph, query: &[usize]) -> Option<Subgraph> {
    if !g.connects(query) {
        return None;
    }
    Some(g.induced(&g.component(query[0])))
}

/// Whether `g` is a connected p-truss holding the query.
fn is_valid(g: &Subgraph, query: &[usize], p: usize) -> bool {
    g.is_connected()
        && query.iter().all(|&q| g.contains(q))
        && g.edges().into_iter().all(|(u, v)| g.support(u, v) + 2 >= p)
}

/// Closest truss community: seed with a Steiner tree, expand along edges at
/// least as dense as the tree's weakest edge, take the densest connected
/// truss holding the query, then repeatedly drop the non-query nodes
/// farthest from the query (re-peeling to keep the truss) and return the
/// iterate with the smallest query distance (ties: smaller diameter, then
/// later iterate). A final pass removes any node whose deletion keeps a
/// connected p-truss over the query.
pub fn closest_truss_community(
    graph: &SignedGraph,
    index: &TrussIndex,
    query: &[usize],
    n0: usize,
) -> Result<Community> {
    let query = dedup_query(graph, query)?;
    let forest = steiner_tree(graph, index, &query)?;
    if forest.multi_component {
        return Err(Error::Disconnected(
            forest
                .trees
                .iter()
                .map(|t| t.nodes.iter().filter(|v| query.contains(v)).copied().collect())
                .collect(),
        ));
    }
    let tree = &forest.trees[0];
    let p_seed = if tree.edges.is_empty() {
        match graph.neighbors(query[0]).filter_map(|w| index.get(query[0], w)).max() {
            Some(t) => t,
            None => return Ok(singleton(query[0])),
        }
    } else {
        tree.edges
            .iter()
            .map(|&(u, v)| index.get(u, v).unwrap_or(2))
            .min()
            .unwrap_or(2)
    };

    // breadth-first expansion over edges of truss ≥ p_seed
    let mut nodes: BTreeSet<usize> = tree.nodes.clone();
    let mut queue: VecDeque<usize> = nodes.iter().copied().collect();
    while let Some(u) = queue.pop_front() {
        if nodes.len() >= n0 {
            break;
        }
        for w in graph.neighbors(u) {
            if nodes.len() >= n0 {
                break;
            }
            if !nodes.contains(&w) && index.get(u, w).unwrap_or(2) >= p_seed {
                nodes.insert(w);
                queue.push_back(w);
            }
        }
    }
    let mut expanded = Subgraph::default();
    for &u in &nodes {
        expanded.add_node(u);
        for w in graph.neighbors(u) {
            if u < w && nodes.contains(&w) && index.get(u, w).unwrap_or(2) >= p_seed {
                expanded.add_edge(u, w);
            }
        }
    }

    // densest p whose p-truss keeps the query connected
    let local = truss_numbers(&expanded);
    let top = local.values().copied().max().unwrap_or(2);
    let mut start = None;
    for p in (2..=top).rev() {
        let mut tr = Subgraph::from_edges(local.iter().filter(|(_, &t)| t >= p).map(|(&e, _)| e));
        tr.drop_isolated();
        if let Some(c) = query_component(&tr, &query) {
            start = Some((p, c));
            break;
        }
    }
    let (p, mut current) = start.ok_or_else(|| Error::Disconnected(vec![query.clone()]))?;

    let score = |g: &Subgraph| (g.query_distance(&query), g.diameter());
    let mut best = (score(&current), current.clone());
    loop {
        let dist = current.query_distances(&query);
        let far = dist.iter().filter(|(v, _)| !query.contains(v)).map(|(_, &d)| d).max();
        let Some(far) = far else { break };
        let mut next = current.clone();
        for (&v, &d) in &dist {
            if d == far && !query.contains(&v) {
                next.remove_node(v);
            }
        }
        next.peel_to_support(p.saturating_sub(2));
        match query_component(&next, &query) {
            Some(c) if c.num_edges() > 0 || query.len() == 1 => {
                current = c;
                let s = score(&current);
                if s <= best.0 {
                    best = (s, current.clone());
                }
            }
            _ => break,
        }
    }

    let mut g = best.1;
    loop {
        let removable = g.nodes().filter(|v| !query.contains(v)).find(|&v| {
            let mut trial = g.clone();
            trial.remove_node(v);
            is_valid(&trial, &query, p)
        });
        match removable {
            Some(v) => g.remove_node(v),
            None => break,
        }
    }
    Ok(Community {
        query_distance: g.query_distance(&query),
        diameter: g.diameter(),
        graph: g,
        p,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationNode {
    pub id: usize,
    pub name: String,
    pub suggested: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationEdge {
    pub u: usize,
    pub v: usize,
    pub sign: i8,
    pub truss: usize,
}

/// Wire form of an explanation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationSubgraph {
    pub nodes: Vec<ExplanationNode>,
    pub edges: Vec<ExplanationEdge>,
    /// Smallest trussness over the communities found.
    pub p: usize,
    pub diameter: usize,
    pub ss: f64,
    /// Set when the suggested drugs fall into several components; the
    /// explanation is then the union of one community per component.
    pub multi_component: bool,
}

impl ExplanationSubgraph {
    pub fn signed_edges(&self) -> Vec<(usize, usize, i8)> {
        self.edges.iter().map(|e| (e.u, e.v, e.sign)).collect()
    }
}

/// Explanation for a suggested set: one community per connected group of
/// the query, their union scored with suggestion satisfaction.
pub fn explain(graph: &SignedGraph, index: &TrussIndex, query: &[usize], alpha: f64) -> Result<ExplanationSubgraph> {
    let query = dedup_query(graph, query)?;
    let forest = steiner_tree(graph, index, &query)?;
    let mut union = Subgraph::default();
    let mut p = usize::MAX;
    let mut diameter = 0;
    for tree in &forest.trees {
        let group: Vec<usize> = tree.nodes.iter().copied().filter(|v| query.contains(v)).collect();
        let c = closest_truss_community(graph, index, &group, default_n0(group.len()))?;
        p = p.min(c.p);
        diameter = diameter.max(c.diameter);
        for v in c.graph.nodes() {
            union.add_node(v);
        }
        for (u, v) in c.graph.edges() {
            union.add_edge(u, v);
        }
    }
    let nodes: Vec<ExplanationNode> = union
        .nodes()
        .map(|v| ExplanationNode {
            id: v,
            name: graph.name(v).to_string(),
            suggested: query.contains(&v),
        })
        .collect();
    let edges: Vec<ExplanationEdge> = union
        .edges()
        .into_iter()
        .map(|(u, v)| ExplanationEdge {
            u,
            v,
            sign: graph.sign(u, v).unwrap_or(0),
            truss: index.get(u, v).unwrap_or(2),
        })
        .collect();
    let signed: Vec<(usize, usize, i8)> = edges.iter().map(|e| (e.u, e.v, e.sign)).collect();
    let ss = suggestion_satisfaction(nodes.len(), &signed, &query, alpha)?;
    Ok(ExplanationSubgraph {
        nodes,
        edges,
        p,
        diameter,
        ss,
        multi_component: forest.multi_component,
    })
}
