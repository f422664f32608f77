use std::collections::{BTreeMap, BTreeSet};

use super::graph::{SignedGraph, Subgraph};

/// Truss number of every edge, keyed by `(min, max)` endpoint.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrussIndex {
    pub truss: BTreeMap<(usize, usize), usize>,
    pub max_p: usize,
}

impl TrussIndex {
    pub fn get(&self, u: usize, v: usize) -> Option<usize> {
        self.truss.get(&(u.min(v), u.max(v))).copied()
    }

    pub fn from_numbers(truss: BTreeMap<(usize, usize), usize>) -> Self {
        let max_p = truss.values().copied().max().unwrap_or(2);
        Self { truss, max_p }
    }
}

/// Peeling: repeatedly delete an edge of minimum current support. Its truss
/// number is the running level `max(level, support + 2)`.
pub fn truss_numbers(graph: &Subgraph) -> BTreeMap<(usize, usize), usize> {
    let mut g = graph.clone();
    let mut support: BTreeMap<(usize, usize), usize> =
        g.edges().into_iter().map(|(u, v)| ((u, v), g.support(u, v))).collect();
    let mut queue: BTreeSet<(usize, usize, usize)> = support.iter().map(|(&(u, v), &s)| (s, u, v)).collect();
    let mut out = BTreeMap::new();
    let mut level = 2;
    while let Some((s, u, v)) = queue.pop_first() {
        level = level.max(s + 2);
        out.insert((u, v), level);
        support.remove(&(u, v));
        for w in g.common_neighbors(u, v) {
            for key in [(u.min(w), u.max(w)), (v.min(w), v.max(w))] {
                if let Some(sup) = support.get_mut(&key) {
                    queue.remove(&(*sup, key.0, key.1));
                    *sup -= 1;
                    queue.insert((*sup, key.0, key.1));
                }
            }
        }
        g.remove_edge(u, v);
    }
    out
}

/// Truss numbers of a signed graph (signs ignored).
pub fn truss_decomposition(graph: &SignedGraph) -> TrussIndex {
    TrussIndex::from_numbers(truss_numbers(&graph.to_subgraph()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn complete(n: usize) -> Subgraph {
        Subgraph::from_edges((0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))))
    }

    #[test]
    fn triangle_and_k4() {
        assert!(truss_numbers(&complete(3)).values().all(|&t| t == 3));
        assert!(truss_numbers(&complete(4)).values().all(|&t| t == 4));
    }

    #[test]
    fn tree_edges_are_two_trusses() {
        let s = Subgraph::from_edges([(0, 1), (1, 2), (1, 3)]);
        assert!(truss_numbers(&s).values().all(|&t| t == 2));
    }

    /// For each p, the maximal subgraph whose edges all have support ≥ p−2.
    fn brute_force(s: &Subgraph) -> BTreeMap<(usize, usize), usize> {
        let mut out: BTreeMap<(usize, usize), usize> = s.edges().into_iter().map(|e| (e, 2)).collect();
        for p in 3..=s.num_nodes().max(3) {
            let mut g = s.clone();
            loop {
                let weak: Vec<_> = g
                    .edges()
                    .into_iter()
                    .filter(|&(u, v)| g.support(u, v) + 2 < p)
                    .collect();
                if weak.is_empty() {
                    break;
                }
                for (u, v) in weak {
                    g.remove_edge(u, v);
                }
            }
            for e in g.edges() {
                out.insert(e, p);
            }
        }
        out
    }

    pub(crate) fn random_graph(seed: u64, max_nodes: usize) -> Subgraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..=max_nodes);
        let density = rng.random_range(0.1..0.9);
        let mut s = Subgraph::default();
        for u in 0..n {
            s.add_node(u);
            for v in u + 1..n {
                if rng.random_bool(density) {
                    s.add_edge(u, v);
                }
            }
        }
        s
    }

    #[test]
    fn matches_brute_force_on_random_graphs() {
        for seed in 0..100 {
            let s = random_graph(seed, 20);
            assert_eq!(truss_numbers(&s), brute_force(&s), "seed {seed}");
        }
    }

    proptest! {
        #[test]
        fn permutation_invariant(seed in 0u64..10_000) {
            let s = random_graph(seed, 12);
            let n = s.num_nodes();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            let relabeled = Subgraph::from_edges(s.edges().into_iter().map(|(u, v)| (perm[u], perm[v])));
            let a = truss_numbers(&s);
            let b = truss_numbers(&relabeled);
            for ((u, v), t) in a {
                let key = (perm[u].min(perm[v]), perm[u].max(perm[v]));
                prop_assert_eq!(b[&key], t);
            }
        }
    }
}
