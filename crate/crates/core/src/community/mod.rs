//! Community detection over context networks.
//!
//! Two detectors are provided: [`demon`] (overlapping, ego-network label
//! propagation) and [`infomap`] (hard partition minimising the two-level map
//! equation). Both run on the undirected projection of the network with
//! summed edge weights, and both drop communities smaller than `min_size`
//! into the residual set.

mod demon;
mod infomap;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{ContextId, UserId};
use crate::network::{pearson, ContextNetwork};

pub use demon::{demon, DemonParams};
pub use infomap::{
    codelength, infomap, infomap_traced, membership_codelength, FlowGraph, FlowModel,
    InfomapParams, InfomapResult, MoveRecord,
};

/// Communities smaller than this are discarded by default.
pub const DEFAULT_MIN_SIZE: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum CommunityError {
    #[error("assignment is not a hard partition: user {0} is in several communities")]
    Overlapping(UserId),
    #[error("user {0} in the assignment is not a node of the network")]
    UnknownNode(UserId),
    #[error("unknown community algorithm {0:?}")]
    UnknownAlgorithm(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Demon,
    Infomap,
}

impl Algorithm {
    pub fn other(self) -> Self {
        match self {
            Self::Demon => Self::Infomap,
            Self::Infomap => Self::Demon,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Demon => "demon",
            Self::Infomap => "infomap",
        })
    }
}

impl FromStr for Algorithm {
    type Err = CommunityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "demon" => Ok(Self::Demon),
            "infomap" => Ok(Self::Infomap),
            _ => Err(CommunityError::UnknownAlgorithm(s.to_string())),
        }
    }
}

/// Retained communities of one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunityAssignment {
    pub context_id: ContextId,
    pub algorithm: Algorithm,
    /// Ordered by size descending, then by smallest member.
    pub communities: Vec<BTreeSet<UserId>>,
    pub membership: BTreeMap<UserId, BTreeSet<usize>>,
    /// Nodes in no retained community.
    pub residual: BTreeSet<UserId>,
}

impl CommunityAssignment {
    /// Filters `candidates` by `min_size`, puts them in canonical order and
    /// derives membership and residual over `nodes`.
    pub fn from_candidates(
        context_id: ContextId,
        algorithm: Algorithm,
        nodes: &BTreeSet<UserId>,
        candidates: Vec<BTreeSet<UserId>>,
        min_size: usize,
    ) -> Self {
        let mut communities: Vec<BTreeSet<UserId>> = candidates
            .into_iter()
            .filter(|c| !c.is_empty() && c.len() >= min_size)
            .collect();
        communities.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.iter().cmp(b.iter())));
        communities.dedup();
        let mut membership: BTreeMap<UserId, BTreeSet<usize>> = BTreeMap::new();
        for (i, c) in communities.iter().enumerate() {
            for u in c {
                membership.entry(u.clone()).or_default().insert(i);
            }
        }
        let residual = nodes
            .iter()
            .filter(|u| !membership.contains_key(*u))
            .cloned()
            .collect();
        Self {
            context_id,
            algorithm,
            communities,
            membership,
            residual,
        }
    }

    pub fn is_null(&self) -> bool {
        self.communities.is_empty()
    }

    pub fn communities_of(&self, user: &UserId) -> impl Iterator<Item = &BTreeSet<UserId>> + '_ {
        self.membership
            .get(user)
            .into_iter()
            .flatten()
            .map(move |&i| &self.communities[i])
    }

    /// Users covered by at least one retained community.
    pub fn retained_users(&self) -> BTreeSet<UserId> {
        self.membership.keys().cloned().collect()
    }

    pub fn is_hard_partition(&self) -> bool {
        self.membership.values().all(|s| s.len() == 1)
    }

    /// `context_id<TAB>algo<TAB>community_idx<TAB>u1,u2,...`, one line per community.
    pub fn to_export_lines(&self) -> String {
        let mut out = String::new();
        for (i, c) in self.communities.iter().enumerate() {
            let members: Vec<&str> = c.iter().map(UserId::as_str).collect();
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                self.context_id,
                self.algorithm,
                i,
                members.join(",")
            ));
        }
        out
    }

    pub fn report(&self, net: &ContextNetwork) -> DetectionReport {
        let n = net.node_count();
        let retained = self.membership.len();
        DetectionReport {
            algorithm: self.algorithm,
            null_communities: self.is_null(),
            community_count: self.communities.len(),
            fraction_users_retained: if n == 0 {
                0.0
            } else {
                retained as f64 / n as f64
            },
            community_assortativity: self
                .communities
                .iter()
                .map(|c| induced_assortativity(net, c))
                .collect(),
        }
    }
}

/// Degree assortativity of the undirected subgraph induced by `members`.
fn induced_assortativity(net: &ContextNetwork, members: &BTreeSet<UserId>) -> Option<f64> {
    let mut adj: BTreeMap<&UserId, BTreeSet<&UserId>> = BTreeMap::new();
    for (a, b) in net.edges.keys() {
        if members.contains(a) && members.contains(b) {
            adj.entry(a).or_default().insert(b);
            adj.entry(b).or_default().insert(a);
        }
    }
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for nbrs in adj.values() {
        for b in nbrs {
            xs.push(nbrs.len() as f64);
            ys.push(adj[b].len() as f64);
        }
    }
    pearson(&xs, &ys)
}

/// Per-network detection outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub algorithm: Algorithm,
    pub null_communities: bool,
    pub community_count: usize,
    pub fraction_users_retained: f64,
    pub community_assortativity: Vec<Option<f64>>,
}

/// Detection outcome plus the users that were added to the profile store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSummary {
    pub context_id: ContextId,
    pub report: DetectionReport,
    pub added_users: BTreeSet<UserId>,
}

/// Aggregate comparison over a collection of contexts for one algorithm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub algorithm: Option<Algorithm>,
    pub contexts: usize,
    pub null_fraction: f64,
    pub mean_communities: f64,
    pub mean_fraction_retained: f64,
    /// Distinct added users seen in two or more contexts, over distinct added users.
    pub repeat_user_fraction: f64,
}

pub fn compare(summaries: &[DetectionSummary]) -> ComparisonSummary {
    let k = summaries.len();
    if k == 0 {
        return ComparisonSummary {
            algorithm: None,
            contexts: 0,
            null_fraction: 0.0,
            mean_communities: 0.0,
            mean_fraction_retained: 0.0,
            repeat_user_fraction: 0.0,
        };
    }
    let kf = k as f64;
    let mut seen: BTreeMap<&UserId, usize> = BTreeMap::new();
    for s in summaries {
        for u in &s.added_users {
            *seen.entry(u).or_insert(0) += 1;
        }
    }
    let repeats = seen.values().filter(|&&c| c >= 2).count();
    ComparisonSummary {
        algorithm: Some(summaries[0].report.algorithm),
        contexts: k,
        null_fraction: summaries
            .iter()
            .filter(|s| s.report.null_communities)
            .count() as f64
            / kf,
        mean_communities: summaries
            .iter()
            .map(|s| s.report.community_count as f64)
            .sum::<f64>()
            / kf,
        mean_fraction_retained: summaries
            .iter()
            .map(|s| s.report.fraction_users_retained)
            .sum::<f64>()
            / kf,
        repeat_user_fraction: if seen.is_empty() {
            0.0
        } else {
            repeats as f64 / seen.len() as f64
        },
    }
}
