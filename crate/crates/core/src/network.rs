//! Directed, weighted user-user networks induced by a context's posts.
//!
//! An ordered post pair `(p1, p2)` with authors `u1 != u2` yields one unit of
//! weight on `u1 -> u2` when `p2` retweets `p1` or `p1` mentions `u2`. A pair
//! satisfying both conditions counts once. A retweet whose original is not in
//! the post set still counts once, and the original author becomes a node.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::PostSet;
use crate::ids::{ContextId, PostId, UserId};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NetworkError {
    #[error("network {0} has no nodes")]
    Empty(ContextId),
    #[error("edge list line {line}: {message}")]
    EdgeList { line: usize, message: String },
}

/// Which way retweet and mention edges point.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeDirection {
    /// Original author -> retweeter, mentioning author -> mentioned user.
    #[default]
    Verbatim,
    /// Retweeter -> original author, mentioned user -> mentioning author.
    Reversed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextNetwork {
    pub context_id: ContextId,
    pub nodes: BTreeSet<UserId>,
    /// `(source, target) -> weight`, weight >= 1, no self-loops.
    #[serde(with = "edge_map")]
    pub edges: BTreeMap<(UserId, UserId), u64>,
}

mod edge_map {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Edge {
        source: UserId,
        target: UserId,
        weight: u64,
    }

    pub fn serialize<S: Serializer>(
        m: &BTreeMap<(UserId, UserId), u64>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        s.collect_seq(m.iter().map(|((a, b), w)| Edge {
            source: a.clone(),
            target: b.clone(),
            weight: *w,
        }))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<BTreeMap<(UserId, UserId), u64>, D::Error> {
        let edges = Vec::<Edge>::deserialize(d)?;
        Ok(edges
            .into_iter()
            .map(|e| ((e.source, e.target), e.weight))
            .collect())
    }
}

impl ContextNetwork {
    pub fn empty(context_id: ContextId) -> Self {
        Self {
            context_id,
            nodes: BTreeSet::new(),
            edges: BTreeMap::new(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn weight(&self, from: &str, to: &str) -> u64 {
        self.edges
            .get(&(UserId::from(from), UserId::from(to)))
            .copied()
            .unwrap_or(0)
    }

    /// `u1<TAB>u2<TAB>w`, one edge per line, sorted.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for ((a, b), w) in &self.edges {
            let _ = writeln!(out, "{a}\t{b}\t{w}");
        }
        out
    }

    /// Parses an edge list. Nodes are the edge endpoints.
    pub fn from_edge_list(context_id: ContextId, text: &str) -> Result<Self, NetworkError> {
        let mut net = Self::empty(context_id);
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [a, b, w] = fields[..] else {
                return Err(NetworkError::EdgeList {
                    line: i + 1,
                    message: "expected three tab-separated fields".into(),
                });
            };
            let w: u64 = w.parse().map_err(|_| NetworkError::EdgeList {
                line: i + 1,
                message: format!("bad weight {w:?}"),
            })?;
            if a == b || w == 0 {
                return Err(NetworkError::EdgeList {
                    line: i + 1,
                    message: "self-loop or zero weight".into(),
                });
            }
            net.nodes.insert(a.into());
            net.nodes.insert(b.into());
            *net.edges.entry((a.into(), b.into())).or_insert(0) += w;
        }
        Ok(net)
    }

    pub fn reversed(&self) -> Self {
        Self {
            context_id: self.context_id.clone(),
            nodes: self.nodes.clone(),
            edges: self
                .edges
                .iter()
                .map(|((a, b), w)| ((b.clone(), a.clone()), *w))
                .collect(),
        }
    }

    /// Node-indexed view; index order is ascending user id.
    pub fn indexed(&self) -> IndexedNetwork {
        IndexedNetwork::new(self)
    }
}

/// Builds the context network from an on-context post set.
pub fn build(posts: &PostSet<'_>, direction: EdgeDirection) -> ContextNetwork {
    let mut net = ContextNetwork::empty(posts.context_id.clone());
    let mut authored: HashMap<&UserId, u64> = HashMap::new();
    for p in posts.iter() {
        *authored.entry(&p.author_id).or_insert(0) += 1;
        net.nodes.insert(p.author_id.clone());
    }
    let by_id: HashMap<&PostId, &crate::corpus::Post> =
        posts.iter().map(|p| (&p.post_id, p)).collect();

    let add = |edges: &mut BTreeMap<(UserId, UserId), u64>, a: &UserId, b: &UserId, w: u64| {
        if a != b && w > 0 {
            *edges.entry((a.clone(), b.clone())).or_insert(0) += w;
        }
    };

    // (ii) p1 mentions u2: one pair per post p2 authored by u2.
    for p1 in posts.iter() {
        let mentioned: HashSet<&UserId> = p1.mentions.iter().collect();
        for u2 in mentioned {
            if let Some(&n) = authored.get(u2) {
                add(&mut net.edges, &p1.author_id, u2, n);
            }
        }
    }
    // (i) p2 retweets p1.
    for p2 in posts.iter() {
        let (Some(orig_id), Some(orig_author)) = (&p2.retweet_of, &p2.original_author) else {
            continue;
        };
        match by_id.get(orig_id) {
            Some(p1) => {
                if !p1.mentions.contains(&p2.author_id) {
                    add(&mut net.edges, &p1.author_id, &p2.author_id, 1);
                }
            }
            None => {
                if orig_author != &p2.author_id {
                    net.nodes.insert(orig_author.clone());
                    add(&mut net.edges, orig_author, &p2.author_id, 1);
                }
            }
        }
    }

    match direction {
        EdgeDirection::Verbatim => net,
        EdgeDirection::Reversed => net.reversed(),
    }
}

/// Table-1 style network statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkStats {
    pub node_count: usize,
    pub edge_count: usize,
    pub density: f64,
    pub avg_degree: f64,
    /// Undirected total-degree Pearson correlation; `None` when undefined.
    pub assortativity: Option<f64>,
    pub scc_ratio: f64,
}

impl NetworkStats {
    /// Density and mean undirected degree from node and edge counts alone.
    pub fn density_and_degree(nodes: usize, edges: usize) -> (f64, f64) {
        if nodes == 0 {
            return (0.0, 0.0);
        }
        let n = nodes as f64;
        let e = edges as f64;
        let density = if nodes >= 2 { e / (n * (n - 1.0)) } else { 0.0 };
        (density, 2.0 * e / n)
    }
}

pub fn stats(net: &ContextNetwork) -> Result<NetworkStats, NetworkError> {
    let n = net.node_count();
    if n == 0 {
        return Err(NetworkError::Empty(net.context_id.clone()));
    }
    let (density, avg_degree) = NetworkStats::density_and_degree(n, net.edge_count());
    let idx = net.indexed();
    Ok(NetworkStats {
        node_count: n,
        edge_count: net.edge_count(),
        density,
        avg_degree,
        assortativity: degree_assortativity(&idx),
        scc_ratio: scc_count(&idx) as f64 / n as f64,
    })
}

/// Pearson correlation of endpoint degrees over the undirected projection.
fn degree_assortativity(idx: &IndexedNetwork) -> Option<f64> {
    let degree: Vec<f64> = idx.undirected.iter().map(|nb| nb.len() as f64).collect();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (a, nbrs) in idx.undirected.iter().enumerate() {
        for &(b, _) in nbrs {
            xs.push(degree[a]);
            ys.push(degree[b]);
        }
    }
    pearson(&xs, &ys)
}

pub(crate) fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let (mut cov, mut vx, mut vy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        cov += (x - mx) * (y - my);
        vx += (x - mx).powi(2);
        vy += (y - my).powi(2);
    }
    if vx <= f64::EPSILON * m || vy <= f64::EPSILON * m {
        return None;
    }
    Some((cov / (vx.sqrt() * vy.sqrt())).clamp(-1.0, 1.0))
}

fn scc_count(idx: &IndexedNetwork) -> usize {
    let mut g: DiGraph<(), ()> = DiGraph::with_capacity(idx.len(), 0);
    let nodes: Vec<_> = (0..idx.len()).map(|_| g.add_node(())).collect();
    for (a, outs) in idx.out.iter().enumerate() {
        for &(b, _) in outs {
            g.add_edge(nodes[a], nodes[b], ());
        }
    }
    tarjan_scc(&g).len()
}

/// Integer-indexed adjacency for the graph algorithms.
#[derive(Debug, Clone)]
pub struct IndexedNetwork {
    pub ids: Vec<UserId>,
    index: HashMap<UserId, usize>,
    /// Directed out-edges `(target, weight)`, ascending target.
    pub out: Vec<Vec<(usize, u64)>>,
    /// Directed in-edges `(source, weight)`, ascending source.
    pub inn: Vec<Vec<(usize, u64)>>,
    /// Undirected projection with summed weights, ascending neighbour.
    pub undirected: Vec<Vec<(usize, f64)>>,
}

impl IndexedNetwork {
    fn new(net: &ContextNetwork) -> Self {
        let ids: Vec<UserId> = net.nodes.iter().cloned().collect();
        let index: HashMap<UserId, usize> = ids
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, u)| (u, i))
            .collect();
        let n = ids.len();
        let mut out = vec![Vec::new(); n];
        let mut inn = vec![Vec::new(); n];
        let mut und: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
        for ((a, b), &w) in &net.edges {
            let (a, b) = (index[a], index[b]);
            out[a].push((b, w));
            inn[b].push((a, w));
            *und[a].entry(b).or_insert(0.0) += w as f64;
            *und[b].entry(a).or_insert(0.0) += w as f64;
        }
        for list in out.iter_mut().chain(inn.iter_mut()) {
            list.sort_unstable();
        }
        Self {
            ids,
            index,
            out,
            inn,
            undirected: und.into_iter().map(|m| m.into_iter().collect()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn index_of(&self, user: &UserId) -> Option<usize> {
        self.index.get(user).copied()
    }
}
