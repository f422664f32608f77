use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsConfig {
    pub alpha: f64,
}

impl Default for SsConfig {
    fn default() -> Self {
        Self { alpha: 0.5 }
    }
}

impl SsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha > 0.0 && self.alpha < 1.0 {
            Ok(())
        } else {
            Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)))
        }
    }
}

/// Signed edge tallies relative to a query set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SignCounts {
    pub inside_synergy: usize,
    pub inside_antagonism: usize,
    pub outside_synergy: usize,
    pub outside_antagonism: usize,
}

impl SignCounts {
    /// Inside edges join two query nodes; outside edges join a query node to
    /// a non-query node. Edges among non-query nodes are not counted.
    pub fn tally(edges: &[(usize, usize, i8)], query: &BTreeSet<usize>) -> Self {
        let mut c = Self::default();
        for &(u, v, s) in edges {
            match (query.contains(&u), query.contains(&v), s > 0) {
                (true, true, true) => c.inside_synergy += 1,
                (true, true, false) => c.inside_antagonism += 1,
                (true, false, true) | (false, true, true) => c.outside_synergy += 1,
                (true, false, false) | (false, true, false) => c.outside_antagonism += 1,
                _ => {}
            }
        }
        c
    }
}

/// Satisfaction of a suggested set within an explanation subgraph of
/// `num_nodes` nodes: a weighted mix of internal synergy (penalised by
/// internal antagonism) and antagonism towards the surrounding drugs.
/// The second term is 0 when the subgraph holds only the query.
pub fn suggestion_satisfaction(
    num_nodes: usize,
    edges: &[(usize, usize, i8)],
    query: &[usize],
    alpha: f64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Argument(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let q: BTreeSet<usize> = query.iter().copied().collect();
    let k = q.len();
    if k == 0 {
        return Err(Error::Argument("empty suggestion set".into()));
    }
    if num_nodes < k {
        return Err(Error::Argument(format!(
            "subgraph of {num_nodes} nodes cannot hold {k} suggestions"
        )));
    }
    let c = SignCounts::tally(edges, &q);
    let inner =
        2.0 * (c.inside_synergy as f64 + 1.0) / ((c.inside_antagonism as f64 + 1.0) * ((k * (k - 1)) as f64 + 2.0));
    let outer = if num_nodes == k {
        0.0
    } else {
        c.outside_antagonism as f64 / (k * (num_nodes - k)) as f64
    };
    Ok(alpha * inner + (1.0 - alpha) * outer)
}
