use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::ddigraph::{DdiGraph, EdgeSign};
use crate::error::{Error, Result};

/// Undirected graph with ±1 edge signs over nodes `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedGraph {
    adj: Vec<BTreeMap<usize, i8>>,
    names: Vec<String>,
}

impl SignedGraph {
    pub fn new(n: usize) -> Self {
        Self {
            adj: vec![BTreeMap::new(); n],
            names: (0..n).map(|i| i.to_string()).collect(),
        }
    }

    /// Synergy and antagonism edges of a DDI graph (neutral pairs dropped).
    pub fn from_ddi(graph: &DdiGraph) -> Self {
        let mut g = Self::new(graph.num_drugs());
        g.names = graph.drugs().iter().map(|d| d.name.clone()).collect();
        for e in graph.edges() {
            if e.sign != EdgeSign::Neutral {
                g.adj[e.u].insert(e.v, e.sign.value());
                g.adj[e.v].insert(e.u, e.sign.value());
            }
        }
        g
    }

    pub fn add_edge(&mut self, u: usize, v: usize, sign: i8) -> Result<()> {
        let n = self.adj.len();
        if u >= n || v >= n {
            return Err(Error::UnknownDrug(u.max(v)));
        }
        if u == v || !(sign == 1 || sign == -1) {
            return Err(Error::Argument(format!("bad edge ({u}, {v}, {sign})")));
        }
        self.adj[u].insert(v, sign);
        self.adj[v].insert(u, sign);
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        self.adj.len()
    }

    pub fn num_edges(&self) -> usize {
        self.adj.iter().map(BTreeMap::len).sum::<usize>() / 2
    }

    pub fn name(&self, v: usize) -> &str {
        &self.names[v]
    }

    pub fn sign(&self, u: usize, v: usize) -> Option<i8> {
        self.adj.get(u)?.get(&v).copied()
    }

    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.adj[v].keys().copied()
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].len()
    }

    /// `(u, v, sign)` with `u < v`, ascending.
    pub fn edges(&self) -> Vec<(usize, usize, i8)> {
        let mut out = Vec::new();
        for (u, nbrs) in self.adj.iter().enumerate() {
            for (&v, &s) in nbrs.range(u + 1..) {
                out.push((u, v, s));
            }
        }
        out
    }

    /// Unsigned view of the whole graph (isolated nodes included).
    pub fn to_subgraph(&self) -> Subgraph {
        let mut s = Subgraph::default();
        for v in 0..self.adj.len() {
            s.add_node(v);
        }
        for (u, v, _) in self.edges() {
            s.add_edge(u, v);
        }
        s
    }
}

/// Unsigned undirected graph over an arbitrary node subset.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Subgraph {
    adj: BTreeMap<usize, BTreeSet<usize>>,
}

impl Subgraph {
    pub fn from_edges(edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut s = Self::default();
        for (u, v) in edges {
            s.add_edge(u, v);
        }
        s
    }

    pub fn add_node(&mut self, v: usize) {
        self.adj.entry(v).or_default();
    }

    pub fn add_edge(&mut self, u: usize, v: usize) {
        debug_assert_ne!(u, v);
        self.adj.entry(u).or_default().insert(v);
        self.adj.entry(v).or_default().insert(u);
    }

    pub fn remove_edge(&mut self, u: usize, v: usize) {
        if let Some(n) = self.adj.get_mut(&u) {
            n.remove(&v);
        }
        if let Some(n) = self.adj.get_mut(&v) {
            n.remove(&u);
        }
    }

    pub fn remove_node(&mut self, v: usize) {
        if let Some(nbrs) = self.adj.remove(&v) {
            for u in nbrs {
                if let Some(n) = self.adj.get_mut(&u) {
                    n.remove(&v);
                }
            }
        }
    }

    pub fn contains(&self, v: usize) -> bool {
        self.adj.contains_key(&v)
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adj.get(&u).is_some_and(|n| n.contains(&v))
    }

    pub fn nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.adj.keys().copied()
    }

    pub fn num_nodes(&self) -> usize {
        self.adj.len()
    }

    pub fn num_edges(&self) -> usize {
        self.adj.values().map(BTreeSet::len).sum::<usize>() / 2
    }

    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.adj.get(&v).into_iter().flatten().copied()
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj.get(&v).map_or(0, BTreeSet::len)
    }

    /// `(u, v)` with `u < v`, ascending.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.adj
            .iter()
            .flat_map(|(&u, n)| n.range(u + 1..).map(move |&v| (u, v)))
            .collect()
    }

    /// Number of triangles through edge `(u, v)`.
    pub fn support(&self, u: usize, v: usize) -> usize {
        match (self.adj.get(&u), self.adj.get(&v)) {
            (Some(a), Some(b)) => a.intersection(b).count(),
            _ => 0,
        }
    }

    pub fn common_neighbors(&self, u: usize, v: usize) -> Vec<usize> {
        match (self.adj.get(&u), self.adj.get(&v)) {
            (Some(a), Some(b)) => a.intersection(b).copied().collect(),
            _ => Vec::new(),
        }
    }

    /// Hop distances from `src`; unreachable nodes are absent.
    pub fn bfs(&self, src: usize) -> BTreeMap<usize, usize> {
        let mut dist = BTreeMap::new();
        if !self.contains(src) {
            return dist;
        }
        dist.insert(src, 0);
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            let d = dist[&u];
            for w in self.neighbors(u) {
                if let std::collections::btree_map::Entry::Vacant(e) = dist.entry(w) {
                    e.insert(d + 1);
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    /// Node set of the component containing `v`.
    pub fn component(&self, v: usize) -> BTreeSet<usize> {
        self.bfs(v).into_keys().collect()
    }

    /// All components, each sorted, ordered by smallest member.
    pub fn components(&self) -> Vec<BTreeSet<usize>> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for v in self.nodes() {
            if seen.insert(v) {
                let c = self.component(v);
                seen.extend(c.iter().copied());
                out.push(c);
            }
        }
        out
    }

    pub fn is_connected(&self) -> bool {
        match self.nodes().next() {
            None => true,
            Some(v) => self.component(v).len() == self.num_nodes(),
        }
    }

    /// Whether every query node is present and all lie in one component.
    pub fn connects(&self, query: &[usize]) -> bool {
        match query.first() {
            None => true,
            Some(&q) => {
                let comp = self.component(q);
                query.iter().all(|v| comp.contains(v))
            }
        }
    }

    /// Restriction to `keep` with the edges among them.
    pub fn induced(&self, keep: &BTreeSet<usize>) -> Subgraph {
        let mut s = Subgraph::default();
        for &v in keep {
            if self.contains(v) {
                s.add_node(v);
                for w in self.neighbors(v) {
                    if keep.contains(&w) {
                        s.add_edge(v, w);
                    }
                }
            }
        }
        s
    }

    /// Longest shortest path (hops) over connected pairs.
    pub fn diameter(&self) -> usize {
        self.nodes()
            .map(|v| self.bfs(v).into_values().max().unwrap_or(0))
            .max()
            .unwrap_or(0)
    }

    /// Per node, the largest hop distance to any query node
    /// (`usize::MAX` when some query node is unreachable).
    pub fn query_distances(&self, query: &[usize]) -> BTreeMap<usize, usize> {
        let mut out: BTreeMap<usize, usize> = self.nodes().map(|v| (v, 0)).collect();
        for &q in query {
            let d = self.bfs(q);
            for (v, best) in out.iter_mut() {
                *best = (*best).max(d.get(v).copied().unwrap_or(usize::MAX));
            }
        }
        out
    }

    /// Largest query distance over all nodes.
    pub fn query_distance(&self, query: &[usize]) -> usize {
        self.query_distances(query).into_values().max().unwrap_or(0)
    }

    /// Drops nodes with no incident edge.
    pub fn drop_isolated(&mut self) {
        self.adj.retain(|_, n| !n.is_empty());
    }

    /// Removes edges with support below `min_support` until none remain,
    /// then drops isolated nodes.
    pub fn peel_to_support(&mut self, min_support: usize) {
        loop {
            let weak: Vec<(usize, usize)> = self
                .edges()
                .into_iter()
                .filter(|&(u, v)| self.support(u, v) < min_support)
                .collect();
            if weak.is_empty() {
                break;
            }
            for (u, v) in weak {
                self.remove_edge(u, v);
            }
        }
        self.drop_isolated();
    }

    /// Minimum edge support (`None` for edgeless graphs).
    pub fn min_support(&self) -> Option<usize> {
        self.edges().into_iter().map(|(u, v)| self.support(u, v)).min()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn support_counts_triangles() {
        let s = Subgraph::from_edges([(0, 1), (1, 2), (0, 2), (2, 3), (1, 3)]);
        assert_eq!(s.support(1, 2), 2);
        assert_eq!(s.support(0, 1), 1);
        assert_eq!(s.support(2, 3), 1);
        assert_eq!(Subgraph::from_edges([(0, 1)]).support(0, 1), 0);
    }

    #[test]
    fn distances_and_diameter_on_path() {
        let s = Subgraph::from_edges([(0, 1), (1, 2), (2, 3)]);
        assert_eq!(s.diameter(), 3);
        assert_eq!(s.query_distance(&[1]), 2);
        assert_eq!(s.query_distances(&[0, 3])[&1], 2);
        assert!(s.connects(&[0, 3]));
    }

    #[test]
    fn peel_removes_pendant_edges() {
        let mut s = Subgraph::from_edges([(0, 1), (1, 2), (0, 2), (2, 3)]);
        s.peel_to_support(1);
        assert_eq!(s.edges(), vec![(0, 1), (0, 2), (1, 2)]);
        assert!(!s.contains(3));
    }

    #[test]
    fn from_ddi_drops_neutral_pairs() {
        let mut d = DdiGraph::with_one_hot_drugs(3);
        d.add_edge(0, 1, EdgeSign::Synergy).unwrap();
        d.add_edge(1, 2, EdgeSign::Neutral).unwrap();
        d.add_edge(0, 2, EdgeSign::Antagonism).unwrap();
        let g = SignedGraph::from_ddi(&d);
        assert_eq!(g.edges(), vec![(0, 1, 1), (0, 2, -1)]);
        assert_eq!(g.num_edges(), 2);
    }
}
