//! DEMON: overlapping communities from ego-network label propagation.
//!
//! For every node `v` (ascending user id) the ego network of `v` minus `v`
//! itself is labelled by asynchronous label propagation; each label class
//! plus `v` becomes a candidate community. Candidates are merged in
//! generation order whenever at most `epsilon` of the smaller one lies
//! outside the larger one.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Algorithm, CommunityAssignment};
use crate::network::{ContextNetwork, IndexedNetwork};
use crate::par::Execution;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemonParams {
    pub epsilon: f64,
    pub min_size: usize,
    pub max_sweeps: usize,
}

impl Default for DemonParams {
    fn default() -> Self {
        Self {
            epsilon: 0.25,
            min_size: super::DEFAULT_MIN_SIZE,
            max_sweeps: 100,
        }
    }
}

pub fn demon(net: &ContextNetwork, params: &DemonParams, exec: Execution) -> CommunityAssignment {
    let idx = net.indexed();
    let per_ego: Vec<Vec<BTreeSet<usize>>> =
        exec.map_range(idx.len(), |v| ego_candidates(&idx, v, params.max_sweeps));

    let mut merged: Vec<BTreeSet<usize>> = Vec::new();
    for candidate in per_ego.into_iter().flatten() {
        merge_into(&mut merged, candidate, params.epsilon);
    }
    let candidates = merged
        .into_iter()
        .map(|c| c.into_iter().map(|i| idx.ids[i].clone()).collect())
        .collect();
    CommunityAssignment::from_candidates(
        net.context_id.clone(),
        Algorithm::Demon,
        &net.nodes,
        candidates,
        params.min_size,
    )
}

/// Label classes of `v`'s ego network (without `v`), each lifted to include `v`.
fn ego_candidates(idx: &IndexedNetwork, v: usize, max_sweeps: usize) -> Vec<BTreeSet<usize>> {
    let ego: Vec<usize> = idx.undirected[v]
        .iter()
        .map(|&(b, _)| b)
        .filter(|&b| b != v)
        .collect();
    if ego.is_empty() {
        return Vec::new();
    }
    let local: BTreeMap<usize, usize> = ego.iter().enumerate().map(|(i, &g)| (g, i)).collect();
    let adj: Vec<Vec<usize>> = ego
        .iter()
        .map(|&g| {
            idx.undirected[g]
                .iter()
                .filter_map(|(b, _)| local.get(b).copied())
                .collect()
        })
        .collect();
    let labels = propagate(&adj, max_sweeps);
    let mut classes: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        classes.entry(l).or_default().insert(ego[i]);
    }
    classes
        .into_values()
        .map(|mut c| {
            c.insert(v);
            c
        })
        .collect()
}

/// Asynchronous label propagation: nodes in index order adopt the most
/// frequent neighbour label, lowest label on ties. Isolated nodes keep
/// their own label.
pub(crate) fn propagate(adj: &[Vec<usize>], max_sweeps: usize) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..adj.len()).collect();
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for _ in 0..max_sweeps {
        let mut changed = false;
        for x in 0..adj.len() {
            if adj[x].is_empty() {
                continue;
            }
            counts.clear();
            for &y in &adj[x] {
                *counts.entry(labels[y]).or_insert(0) += 1;
            }
            let best = counts
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(&l, _)| l)
                .expect("non-empty neighbourhood");
            if best != labels[x] {
                labels[x] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    labels
}

fn mergeable(a: &BTreeSet<usize>, b: &BTreeSet<usize>, epsilon: f64) -> bool {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    if small.is_empty() {
        return true;
    }
    let outside = small.difference(large).count();
    outside as f64 <= epsilon * small.len() as f64
}

fn merge_into(result: &mut Vec<BTreeSet<usize>>, mut candidate: BTreeSet<usize>, epsilon: f64) {
    while let Some(pos) = result
        .iter()
        .position(|c| mergeable(c, &candidate, epsilon))
    {
        let existing = result.remove(pos);
        candidate.extend(existing);
    }
    result.push(candidate);
}
