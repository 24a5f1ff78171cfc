//! Two-level map equation and a Louvain-style optimiser for it.
//!
//! For a hard partition `M` of the nodes, with node visit rates `p_a` and
//! module exit rates `q_i`, the description length per step is
//!
//! ```text
//! L(M) = q·H(Q) + Σ_i (q_i + p_i)·H(P_i)
//!      = plogp(q) - 2 Σ plogp(q_i) - Σ_a plogp(p_a) + Σ_i plogp(q_i + p_i)
//! ```
//!
//! with `q = Σ q_i`, `p_i = Σ_{a∈i} p_a` and `plogp(x) = x·log2(x)`.
//!
//! Visit rates come from one of two flow models. The default is the
//! stationary distribution of an unbiased walk on the undirected projection
//! (`p_a` proportional to weighted degree, link flow `w_ab / 2W` each way).
//! The alternative is directed PageRank with uniform teleportation, where
//! teleport steps leaving a module count towards its exit rate.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Algorithm, CommunityAssignment, CommunityError};
use crate::ids::UserId;
use crate::network::{ContextNetwork, IndexedNetwork};
use crate::par::Execution;

/// Improvements smaller than this are treated as numerical noise.
const MIN_IMPROVEMENT: f64 = 1e-10;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FlowModel {
    #[default]
    UndirectedDegree,
    DirectedPagerank {
        teleportation: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfomapParams {
    pub seed: u64,
    pub min_size: usize,
    /// Independent optimisation runs; the shortest codelength wins.
    pub trials: usize,
    pub flow: FlowModel,
    /// Upper bound on node sweeps per level.
    pub max_sweeps: usize,
}

impl Default for InfomapParams {
    fn default() -> Self {
        Self {
            seed: 0,
            min_size: super::DEFAULT_MIN_SIZE,
            trials: 4,
            flow: FlowModel::UndirectedDegree,
            max_sweeps: 200,
        }
    }
}

#[inline]
fn plogp(x: f64) -> f64 {
    if x > 0.0 {
        x * x.log2()
    } else {
        0.0
    }
}

/// Visit rates and link flows of a network (or of an aggregated level of it).
#[derive(Debug, Clone)]
pub struct FlowGraph {
    node_flow: Vec<f64>,
    /// Flow leaving each node by teleportation.
    tele: Vec<f64>,
    /// Number of original nodes each node stands for.
    size: Vec<f64>,
    total_size: f64,
    out: Vec<Vec<(usize, f64)>>,
    inn: Vec<Vec<(usize, f64)>>,
    out_total: Vec<f64>,
}

impl FlowGraph {
    pub fn new(net: &IndexedNetwork, model: FlowModel) -> Self {
        match model {
            FlowModel::UndirectedDegree => Self::undirected(net),
            FlowModel::DirectedPagerank { teleportation } => Self::pagerank(net, teleportation),
        }
    }

    fn undirected(net: &IndexedNetwork) -> Self {
        let n = net.len();
        let degree: Vec<f64> = net
            .undirected
            .iter()
            .map(|nb| nb.iter().map(|&(_, w)| w).sum())
            .collect();
        let two_w: f64 = degree.iter().sum();
        if two_w <= 0.0 {
            return Self::isolated(n);
        }
        let out: Vec<Vec<(usize, f64)>> = net
            .undirected
            .iter()
            .map(|nb| nb.iter().map(|&(b, w)| (b, w / two_w)).collect())
            .collect();
        let out_total = out
            .iter()
            .map(|l| l.iter().map(|&(_, f)| f).sum())
            .collect();
        Self {
            node_flow: degree.iter().map(|d| d / two_w).collect(),
            tele: vec![0.0; n],
            size: vec![1.0; n],
            total_size: n as f64,
            inn: out.clone(),
            out,
            out_total,
        }
    }

    fn isolated(n: usize) -> Self {
        Self {
            node_flow: vec![1.0 / n.max(1) as f64; n],
            tele: vec![0.0; n],
            size: vec![1.0; n],
            total_size: n as f64,
            out: vec![Vec::new(); n],
            inn: vec![Vec::new(); n],
            out_total: vec![0.0; n],
        }
    }

    fn pagerank(net: &IndexedNetwork, alpha: f64) -> Self {
        let n = net.len();
        if n == 0 {
            return Self::isolated(0);
        }
        let nf = n as f64;
        let w_out: Vec<f64> = net
            .out
            .iter()
            .map(|l| l.iter().map(|&(_, w)| w as f64).sum())
            .collect();
        let mut p = vec![1.0 / nf; n];
        for _ in 0..10_000 {
            let teleported: f64 = (0..n)
                .map(|a| if w_out[a] > 0.0 { alpha * p[a] } else { p[a] })
                .sum();
            let mut next = vec![teleported / nf; n];
            for a in 0..n {
                if w_out[a] > 0.0 {
                    for &(b, w) in &net.out[a] {
                        next[b] += (1.0 - alpha) * p[a] * w as f64 / w_out[a];
                    }
                }
            }
            let total: f64 = next.iter().sum();
            next.iter_mut().for_each(|x| *x /= total);
            let diff: f64 = next.iter().zip(&p).map(|(x, y)| (x - y).abs()).sum();
            p = next;
            if diff < 1e-15 {
                break;
            }
        }
        let mut out = vec![Vec::new(); n];
        let mut inn = vec![Vec::new(); n];
        for a in 0..n {
            for &(b, w) in &net.out[a] {
                let f = (1.0 - alpha) * p[a] * w as f64 / w_out[a];
                out[a].push((b, f));
                inn[b].push((a, f));
            }
        }
        for l in &mut inn {
            l.sort_by_key(|&(b, _)| b);
        }
        let tele = (0..n)
            .map(|a| if w_out[a] > 0.0 { alpha * p[a] } else { p[a] })
            .collect();
        let out_total = out
            .iter()
            .map(|l| l.iter().map(|&(_, f)| f).sum())
            .collect();
        Self {
            node_flow: p,
            tele,
            size: vec![1.0; n],
            total_size: nf,
            out,
            inn,
            out_total,
        }
    }

    pub fn len(&self) -> usize {
        self.node_flow.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_flow.is_empty()
    }

    pub fn node_flow(&self) -> &[f64] {
        &self.node_flow
    }

    fn node_entropy_term(&self) -> f64 {
        self.node_flow.iter().map(|&p| plogp(p)).sum()
    }

    /// Collapses modules into single nodes; links inside a module disappear.
    fn aggregate(&self, module: &[usize], k: usize) -> Self {
        let mut g = Self {
            node_flow: vec![0.0; k],
            tele: vec![0.0; k],
            size: vec![0.0; k],
            total_size: self.total_size,
            out: vec![Vec::new(); k],
            inn: vec![Vec::new(); k],
            out_total: vec![0.0; k],
        };
        let mut links: std::collections::BTreeMap<(usize, usize), f64> = Default::default();
        for a in 0..self.len() {
            let m = module[a];
            g.node_flow[m] += self.node_flow[a];
            g.tele[m] += self.tele[a];
            g.size[m] += self.size[a];
            for &(b, f) in &self.out[a] {
                if module[b] != m {
                    *links.entry((m, module[b])).or_insert(0.0) += f;
                }
            }
        }
        for ((x, y), f) in links {
            g.out[x].push((y, f));
            g.inn[y].push((x, f));
            g.out_total[x] += f;
        }
        g
    }
}

/// Exit rate of a module from its aggregate teleport flow, size and link exit flow.
#[inline]
fn exit_rate(tele: f64, size: f64, total_size: f64, exit_links: f64) -> f64 {
    (tele * (1.0 - size / total_size) + exit_links).max(0.0)
}

/// Map equation value of `membership` (module index per node) on `g`.
pub fn membership_codelength(g: &FlowGraph, membership: &[usize]) -> f64 {
    let k = membership.iter().copied().max().map_or(0, |m| m + 1);
    let mut flow = vec![0.0; k];
    let mut tele = vec![0.0; k];
    let mut size = vec![0.0; k];
    let mut exit = vec![0.0; k];
    for a in 0..g.len() {
        let m = membership[a];
        flow[m] += g.node_flow[a];
        tele[m] += g.tele[a];
        size[m] += g.size[a];
        for &(b, f) in &g.out[a] {
            if membership[b] != m {
                exit[m] += f;
            }
        }
    }
    let q: Vec<f64> = (0..k)
        .map(|m| exit_rate(tele[m], size[m], g.total_size, exit[m]))
        .collect();
    let sum_q: f64 = q.iter().sum();
    plogp(sum_q) - 2.0 * q.iter().map(|&x| plogp(x)).sum::<f64>() - g.node_entropy_term()
        + (0..k).map(|m| plogp(q[m] + flow[m])).sum::<f64>()
}

/// Map equation value of a hard assignment. Residual nodes count as
/// singleton modules.
pub fn codelength(
    net: &ContextNetwork,
    assignment: &CommunityAssignment,
    model: FlowModel,
) -> Result<f64, CommunityError> {
    let idx = net.indexed();
    let mut membership = vec![usize::MAX; idx.len()];
    for (user, comms) in &assignment.membership {
        if comms.len() > 1 {
            return Err(CommunityError::Overlapping(user.clone()));
        }
        let a = idx
            .index_of(user)
            .ok_or_else(|| CommunityError::UnknownNode(user.clone()))?;
        membership[a] = *comms.iter().next().expect("non-empty membership");
    }
    let first = assignment.communities.len();
    for (m, next) in membership
        .iter_mut()
        .filter(|m| **m == usize::MAX)
        .zip(first..)
    {
        *m = next;
    }
    Ok(membership_codelength(
        &FlowGraph::new(&idx, model),
        &membership,
    ))
}

/// One accepted node move, as seen at the original node level.
#[derive(Debug, Clone, PartialEq)]
pub struct MoveRecord {
    pub codelength_before: f64,
    pub codelength_after: f64,
    pub membership_after: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfomapResult {
    pub assignment: CommunityAssignment,
    /// Module per node (ascending user id order) before size filtering.
    pub membership: Vec<usize>,
    pub codelength: f64,
    pub one_module_codelength: f64,
    pub singleton_codelength: f64,
}

/// Mutable optimiser state for one level.
struct Level<'g> {
    g: &'g FlowGraph,
    module: Vec<usize>,
    flow: Vec<f64>,
    tele: Vec<f64>,
    size: Vec<f64>,
    exit_links: Vec<f64>,
    members: Vec<usize>,
    empty: Vec<usize>,
    sum_q: f64,
    sum_plogp_q: f64,
    sum_plogp_qp: f64,
    node_term: f64,
}

impl<'g> Level<'g> {
    fn new(g: &'g FlowGraph, module: Vec<usize>, node_term: f64) -> Self {
        let n = g.len();
        let mut lvl = Self {
            g,
            module,
            flow: vec![0.0; n],
            tele: vec![0.0; n],
            size: vec![0.0; n],
            exit_links: vec![0.0; n],
            members: vec![0; n],
            empty: Vec::new(),
            sum_q: 0.0,
            sum_plogp_q: 0.0,
            sum_plogp_qp: 0.0,
            node_term,
        };
        lvl.recompute();
        lvl
    }

    fn recompute(&mut self) {
        let n = self.g.len();
        for v in [
            &mut self.flow,
            &mut self.tele,
            &mut self.size,
            &mut self.exit_links,
        ] {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
        self.members.iter_mut().for_each(|x| *x = 0);
        for a in 0..n {
            let m = self.module[a];
            self.flow[m] += self.g.node_flow[a];
            self.tele[m] += self.g.tele[a];
            self.size[m] += self.g.size[a];
            self.members[m] += 1;
            for &(b, f) in &self.g.out[a] {
                if self.module[b] != m {
                    self.exit_links[m] += f;
                }
            }
        }
        self.empty = (0..n).rev().filter(|&m| self.members[m] == 0).collect();
        self.sum_q = 0.0;
        self.sum_plogp_q = 0.0;
        self.sum_plogp_qp = 0.0;
        for m in 0..n {
            if self.members[m] > 0 {
                let q = self.q(m);
                self.sum_q += q;
                self.sum_plogp_q += plogp(q);
                self.sum_plogp_qp += plogp(q + self.flow[m]);
            }
        }
    }

    fn q(&self, m: usize) -> f64 {
        exit_rate(
            self.tele[m],
            self.size[m],
            self.g.total_size,
            self.exit_links[m],
        )
    }

    fn codelength(&self) -> f64 {
        plogp(self.sum_q) - 2.0 * self.sum_plogp_q - self.node_term + self.sum_plogp_qp
    }

    /// Best strictly improving move for `a`, as `(target, new codelength, new module states)`.
    fn best_move(
        &self,
        a: usize,
        scratch: &mut Vec<(usize, f64, f64)>,
    ) -> Option<(usize, f64, [ModuleState; 2])> {
        let g = self.g;
        let from = self.module[a];
        scratch.clear();
        let slot = |scratch: &mut Vec<(usize, f64, f64)>, m: usize| -> usize {
            match scratch.iter().position(|e| e.0 == m) {
                Some(i) => i,
                None => {
                    scratch.push((m, 0.0, 0.0));
                    scratch.len() - 1
                }
            }
        };
        let i = slot(scratch, from);
        debug_assert_eq!(i, 0);
        for &(b, f) in &g.out[a] {
            let i = slot(scratch, self.module[b]);
            scratch[i].1 += f;
        }
        for &(b, f) in &g.inn[a] {
            let i = slot(scratch, self.module[b]);
            scratch[i].2 += f;
        }
        if self.members[from] > 1 {
            if let Some(&fresh) = self.empty.last() {
                scratch.push((fresh, 0.0, 0.0));
            }
        }
        let (p_a, t_a, s_a, out_a) = (g.node_flow[a], g.tele[a], g.size[a], g.out_total[a]);
        let (_, to_from, from_from) = scratch[0];
        let old_from = ModuleState {
            module: from,
            flow: self.flow[from] - p_a,
            tele: self.tele[from] - t_a,
            size: self.size[from] - s_a,
            exit_links: self.exit_links[from] - (out_a - to_from) + from_from,
        };
        let q_from_before = self.q(from);
        let q_from_after = old_from.q(g.total_size);
        let current = self.codelength();
        let mut best: Option<(usize, f64, [ModuleState; 2])> = None;
        for &(m, to_m, from_m) in scratch.iter().skip(1) {
            if m == from {
                continue;
            }
            let new_to = ModuleState {
                module: m,
                flow: self.flow[m] + p_a,
                tele: self.tele[m] + t_a,
                size: self.size[m] + s_a,
                exit_links: self.exit_links[m] - from_m + (out_a - to_m),
            };
            let q_to_before = self.q(m);
            let q_to_after = new_to.q(g.total_size);
            let sum_q = self.sum_q - q_from_before - q_to_before + q_from_after + q_to_after;
            let sum_plogp_q = self.sum_plogp_q - plogp(q_from_before) - plogp(q_to_before)
                + plogp(q_from_after)
                + plogp(q_to_after);
            let sum_plogp_qp = self.sum_plogp_qp
                - plogp(q_from_before + self.flow[from])
                - plogp(q_to_before + self.flow[m])
                + plogp(q_from_after + old_from.flow)
                + plogp(q_to_after + new_to.flow);
            let l = plogp(sum_q) - 2.0 * sum_plogp_q - self.node_term + sum_plogp_qp;
            if l < current - MIN_IMPROVEMENT && best.as_ref().is_none_or(|b| l < b.1) {
                best = Some((m, l, [old_from.clone(), new_to]));
            }
        }
        best
    }

    fn apply(&mut self, a: usize, states: [ModuleState; 2]) {
        let [from, to] = states;
        for st in [&from, &to] {
            let m = st.module;
            if self.members[m] > 0 {
                let q = self.q(m);
                self.sum_q -= q;
                self.sum_plogp_q -= plogp(q);
                self.sum_plogp_qp -= plogp(q + self.flow[m]);
            }
        }
        if self.members[to.module] == 0 {
            self.empty.retain(|&m| m != to.module);
        }
        self.members[from.module] -= 1;
        self.members[to.module] += 1;
        for st in [&from, &to] {
            let m = st.module;
            self.flow[m] = st.flow.max(0.0);
            self.tele[m] = st.tele.max(0.0);
            self.size[m] = st.size.max(0.0);
            self.exit_links[m] = st.exit_links.max(0.0);
            if self.members[m] > 0 {
                let q = self.q(m);
                self.sum_q += q;
                self.sum_plogp_q += plogp(q);
                self.sum_plogp_qp += plogp(q + self.flow[m]);
            }
        }
        if self.members[from.module] == 0 {
            self.flow[from.module] = 0.0;
            self.tele[from.module] = 0.0;
            self.size[from.module] = 0.0;
            self.exit_links[from.module] = 0.0;
            self.empty.push(from.module);
        }
        self.module[a] = to.module;
    }

    /// Consecutive module labels in order of first appearance.
    fn relabel(&self) -> (Vec<usize>, usize) {
        let mut map = vec![usize::MAX; self.g.len()];
        let mut next = 0;
        let labels = self
            .module
            .iter()
            .map(|&m| {
                if map[m] == usize::MAX {
                    map[m] = next;
                    next += 1;
                }
                map[m]
            })
            .collect();
        (labels, next)
    }
}

#[derive(Debug, Clone)]
struct ModuleState {
    module: usize,
    flow: f64,
    tele: f64,
    size: f64,
    exit_links: f64,
}

impl ModuleState {
    fn q(&self, total_size: f64) -> f64 {
        exit_rate(self.tele, self.size, total_size, self.exit_links)
    }
}

struct Trial<'a> {
    base: &'a FlowGraph,
    rng: ChaCha8Rng,
    max_sweeps: usize,
    trace: Option<Vec<MoveRecord>>,
}

impl Trial<'_> {
    /// Local moves on one level. `to_orig` maps each original node to its
    /// node at this level (only used for tracing). Returns whether any move happened.
    fn local_moves(&mut self, lvl: &mut Level<'_>, to_orig: &[usize]) -> bool {
        let n = lvl.g.len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut scratch = Vec::new();
        let mut moved_any = false;
        for _ in 0..self.max_sweeps {
            order.shuffle(&mut self.rng);
            let mut moved = false;
            for &a in &order {
                if let Some((_, new_l, states)) = lvl.best_move(a, &mut scratch) {
                    let before = lvl.codelength();
                    lvl.apply(a, states);
                    moved = true;
                    if let Some(trace) = self.trace.as_mut() {
                        trace.push(MoveRecord {
                            codelength_before: before,
                            codelength_after: new_l,
                            membership_after: to_orig.iter().map(|&x| lvl.module[x]).collect(),
                        });
                    }
                }
            }
            lvl.recompute();
            if !moved {
                break;
            }
            moved_any = true;
        }
        moved_any
    }

    /// Full optimisation from singletons. Returns the original-node membership.
    fn run(&mut self) -> Vec<usize> {
        let n = self.base.len();
        let node_term = self.base.node_entropy_term();
        let mut membership: Vec<usize> = (0..n).collect();
        let mut best_l = membership_codelength(self.base, &membership);
        for _ in 0..20 {
            let identity: Vec<usize> = (0..n).collect();
            let mut lvl = Level::new(self.base, membership.clone(), node_term);
            self.local_moves(&mut lvl, &identity);
            let (labels, mut k) = lvl.relabel();
            membership = labels;
            // Coarsen until a level produces no move.
            loop {
                if k <= 1 {
                    break;
                }
                let coarse = self.base.aggregate(&membership, k);
                let mut clvl = Level::new(&coarse, (0..k).collect(), node_term);
                if !self.local_moves(&mut clvl, &membership) {
                    break;
                }
                let (labels, k2) = clvl.relabel();
                membership = membership.iter().map(|&m| labels[m]).collect();
                k = k2;
            }
            let l = membership_codelength(self.base, &membership);
            if l > best_l - MIN_IMPROVEMENT {
                break;
            }
            best_l = l;
        }
        membership
    }
}

fn trial_seed(seed: u64, trial: usize) -> u64 {
    // splitmix64
    let mut z = seed.wrapping_add((trial as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn optimise(
    net: &ContextNetwork,
    params: &InfomapParams,
    exec: Execution,
    traced: bool,
) -> (InfomapResult, Vec<Vec<MoveRecord>>) {
    let idx = net.indexed();
    let g = FlowGraph::new(&idx, params.flow);
    let n = g.len();
    let trials = params.trials.max(1);
    let runs: Vec<(Vec<usize>, f64, Option<Vec<MoveRecord>>)> = exec.map_range(trials, |t| {
        let mut trial = Trial {
            base: &g,
            rng: ChaCha8Rng::seed_from_u64(trial_seed(params.seed, t)),
            max_sweeps: params.max_sweeps.max(1),
            trace: traced.then(Vec::new),
        };
        let m = trial.run();
        let l = membership_codelength(&g, &m);
        (m, l, trial.trace)
    });
    let singletons: Vec<usize> = (0..n).collect();
    let one_module = vec![0; n];
    let singleton_codelength = membership_codelength(&g, &singletons);
    let one_module_codelength = membership_codelength(&g, &one_module);

    let mut best = runs
        .iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| a.1.total_cmp(&b.1).then(i.cmp(j)))
        .map(|(_, r)| (r.0.clone(), r.1))
        .unwrap_or((Vec::new(), 0.0));
    for (fallback, l) in [
        (one_module, one_module_codelength),
        (singletons, singleton_codelength),
    ] {
        if l < best.1 - MIN_IMPROVEMENT {
            best = (fallback, l);
        }
    }
    let (membership, l) = best;
    let k = membership.iter().copied().max().map_or(0, |m| m + 1);
    let mut groups: Vec<std::collections::BTreeSet<UserId>> = vec![Default::default(); k];
    for (a, &m) in membership.iter().enumerate() {
        groups[m].insert(idx.ids[a].clone());
    }
    let assignment = CommunityAssignment::from_candidates(
        net.context_id.clone(),
        Algorithm::Infomap,
        &net.nodes,
        groups,
        params.min_size,
    );
    let traces = runs.into_iter().filter_map(|r| r.2).collect();
    (
        InfomapResult {
            assignment,
            membership,
            codelength: l,
            one_module_codelength,
            singleton_codelength,
        },
        traces,
    )
}

/// Hard partition minimising the map equation.
pub fn infomap(net: &ContextNetwork, params: &InfomapParams, exec: Execution) -> InfomapResult {
    optimise(net, params, exec, false).0
}

/// Like [`infomap`], also returning every accepted move of every trial.
pub fn infomap_traced(
    net: &ContextNetwork,
    params: &InfomapParams,
) -> (InfomapResult, Vec<Vec<MoveRecord>>) {
    optimise(net, params, Execution::Sequential, true)
}
