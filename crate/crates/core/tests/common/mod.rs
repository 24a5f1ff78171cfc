#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use ctxmine::network::ContextNetwork;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub mod fidelity;
pub mod ranking;

pub fn network_from_pairs(
    id: &str,
    edges: &[(String, String)],
    nodes: &[String],
) -> ContextNetwork {
    let mut net = ContextNetwork::empty(id.into());
    for n in nodes {
        net.nodes.insert(n.as_str().into());
    }
    for (a, b) in edges {
        net.nodes.insert(a.as_str().into());
        net.nodes.insert(b.as_str().into());
        *net.edges
            .entry((a.as_str().into(), b.as_str().into()))
            .or_insert(0) += 1;
    }
    net
}

/// Two 5-cliques `a0..a4`, `b0..b4` joined by the single edge `a4 -> b0`.
pub fn two_five_cliques() -> ContextNetwork {
    let mut edges = Vec::new();
    for side in ["a", "b"] {
        for i in 0..5 {
            for j in i + 1..5 {
                edges.push((format!("{side}{i}"), format!("{side}{j}")));
            }
        }
    }
    edges.push(("a4".into(), "b0".into()));
    network_from_pairs("cliques", &edges, &[])
}

/// Planted partition with `blocks` blocks of `size` nodes each; node names
/// are `g{block}_{i:02}`. Returns the network and the planted block of each
/// node in ascending name order.
pub fn planted_partition(
    blocks: usize,
    size: usize,
    p_in: f64,
    p_out: f64,
    seed: u64,
) -> (ContextNetwork, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = (0..blocks * size)
        .map(|i| format!("g{}_{:02}", i / size, i % size))
        .collect();
    let mut edges = Vec::new();
    for i in 0..names.len() {
        for j in i + 1..names.len() {
            let p = if i / size == j / size { p_in } else { p_out };
            if rng.random::<f64>() < p {
                edges.push((names[i].clone(), names[j].clone()));
            }
        }
    }
    let net = network_from_pairs("planted", &edges, &names);
    let blocks_of = net
        .nodes
        .iter()
        .map(|n| n.as_str()[1..2].parse().unwrap())
        .collect();
    (net, blocks_of)
}

pub fn random_graph(n: usize, p: f64, seed: u64) -> ContextNetwork {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = (0..n).map(|i| format!("n{i:02}")).collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.random::<f64>() < p {
                edges.push((names[i].clone(), names[j].clone()));
            }
        }
    }
    network_from_pairs("random", &edges, &names)
}

/// Map equation evaluated directly from its entropy form on the undirected
/// projection: L = q H(Q) + sum_i (q_i + p_i) H(P_i).
pub fn map_equation_oracle(net: &ContextNetwork, membership: &[usize]) -> f64 {
    let names: Vec<&str> = net.nodes.iter().map(|u| u.as_str()).collect();
    let pos: BTreeMap<&str, usize> = names.iter().enumerate().map(|(i, &n)| (n, i)).collect();
    let n = names.len();
    let mut w: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for ((a, b), &x) in &net.edges {
        let (i, j) = (pos[a.as_str()], pos[b.as_str()]);
        let key = (i.min(j), i.max(j));
        *w.entry(key).or_insert(0.0) += x as f64;
    }
    let total: f64 = w.values().sum();
    let mut p = vec![0.0; n];
    if total == 0.0 {
        p.iter_mut().for_each(|x| *x = 1.0 / n as f64);
    } else {
        for (&(i, j), &x) in &w {
            p[i] += x / (2.0 * total);
            p[j] += x / (2.0 * total);
        }
    }
    let modules: BTreeSet<usize> = membership.iter().copied().collect();
    let mut q: BTreeMap<usize, f64> = modules.iter().map(|&m| (m, 0.0)).collect();
    for (&(i, j), &x) in &w {
        if membership[i] != membership[j] {
            *q.get_mut(&membership[i]).unwrap() += x / (2.0 * total);
            *q.get_mut(&membership[j]).unwrap() += x / (2.0 * total);
        }
    }
    let h = |xs: &[f64]| -> f64 {
        let s: f64 = xs.iter().sum();
        if s <= 0.0 {
            return 0.0;
        }
        -xs.iter()
            .filter(|&&x| x > 0.0)
            .map(|&x| (x / s) * (x / s).log2())
            .sum::<f64>()
    };
    let qs: Vec<f64> = q.values().copied().collect();
    let q_total: f64 = qs.iter().sum();
    let mut l = q_total * h(&qs);
    for &m in &modules {
        let mut parts = vec![q[&m]];
        parts.extend((0..n).filter(|&a| membership[a] == m).map(|a| p[a]));
        let weight: f64 = parts.iter().sum();
        l += weight * h(&parts);
    }
    l
}

/// Normalised mutual information 2 I(X;Y) / (H(X) + H(Y)).
pub fn nmi(x: &[usize], y: &[usize]) -> f64 {
    let n = x.len() as f64;
    let mut joint: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut px: BTreeMap<usize, f64> = BTreeMap::new();
    let mut py: BTreeMap<usize, f64> = BTreeMap::new();
    for (&a, &b) in x.iter().zip(y) {
        *joint.entry((a, b)).or_insert(0.0) += 1.0 / n;
        *px.entry(a).or_insert(0.0) += 1.0 / n;
        *py.entry(b).or_insert(0.0) += 1.0 / n;
    }
    let ent = |m: &BTreeMap<usize, f64>| -m.values().map(|p| p * p.ln()).sum::<f64>();
    let mi: f64 = joint
        .iter()
        .map(|(&(a, b), &p)| p * (p / (px[&a] * py[&b])).ln())
        .sum();
    let denom = ent(&px) + ent(&py);
    if denom == 0.0 {
        1.0
    } else {
        2.0 * mi / denom
    }
}

/// All set partitions of `n` elements as restricted growth strings.
pub fn for_each_partition(n: usize, mut f: impl FnMut(&[usize])) {
    let mut a = vec![0usize; n];
    let mut maxes = vec![0usize; n];
    loop {
        f(&a);
        // Next restricted growth string.
        let mut i = n - 1;
        loop {
            if i == 0 {
                return;
            }
            if a[i] <= maxes[i - 1] {
                a[i] += 1;
                maxes[i] = maxes[i - 1].max(a[i]);
                for j in i + 1..n {
                    a[j] = 0;
                    maxes[j] = maxes[i];
                }
                break;
            }
            i -= 1;
        }
    }
}
