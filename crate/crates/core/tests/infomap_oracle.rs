mod common;

use std::time::Instant;

use common::*;
use ctxmine::community::{infomap, infomap_traced, InfomapParams};
use ctxmine::par::Execution;

#[test]
fn oracle_agrees_with_library_codelength() {
    use ctxmine::community::{membership_codelength, FlowGraph, FlowModel};
    let net = two_five_cliques();
    let g = FlowGraph::new(&net.indexed(), FlowModel::UndirectedDegree);
    for m in [
        vec![0; 10],
        (0..10).collect(),
        vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1],
        vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1],
    ] {
        let a = membership_codelength(&g, &m);
        let b = map_equation_oracle(&net, &m);
        assert!(
            (a - b).abs() <= 1e-12 * b.abs().max(1.0),
            "{m:?}: {a} vs {b}"
        );
    }
}

#[test]
fn exhaustive_search_matches_infomap_on_two_cliques() {
    let start = Instant::now();
    let net = two_five_cliques();
    let mut count = 0usize;
    let mut best = (f64::INFINITY, Vec::new());
    for_each_partition(10, |m| {
        count += 1;
        let l = map_equation_oracle(&net, m);
        if l < best.0 - 1e-12 {
            best = (l, m.to_vec());
        }
    });
    assert_eq!(count, 115_975);
    assert_eq!(best.1, vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
    let r = infomap(&net, &InfomapParams::default(), Execution::Parallel);
    assert!(
        r.codelength <= best.0 + 1e-9,
        "infomap {} vs optimum {}",
        r.codelength,
        best.0
    );
    assert!((map_equation_oracle(&net, &r.membership) - r.codelength).abs() < 1e-9);
    let names = |prefix: &str| {
        (0..5)
            .map(|i| format!("{prefix}{i}").as_str().into())
            .collect::<std::collections::BTreeSet<_>>()
    };
    assert_eq!(r.assignment.communities, vec![names("a"), names("b")]);
    assert!(start.elapsed().as_secs() < 30);
}

#[test]
fn planted_partition_recovered() {
    let (net, truth) = planted_partition(4, 10, 0.4, 0.02, 7);
    let r = infomap(&net, &InfomapParams::default(), Execution::Parallel);
    let score = nmi(&r.membership, &truth);
    assert!(score >= 0.9, "nmi {score}");
}

#[test]
fn every_move_strictly_decreases_codelength() {
    for graph in 0..5u64 {
        let net = random_graph(24, 0.08, 100 + graph);
        let n = net.node_count();
        let singles: Vec<usize> = (0..n).collect();
        for seed in 0..100u64 {
            let params = InfomapParams {
                seed,
                trials: 1,
                ..Default::default()
            };
            let (r, traces) = infomap_traced(&net, &params);
            let mut prev = map_equation_oracle(&net, &singles);
            for mv in &traces[0] {
                let now = map_equation_oracle(&net, &mv.membership_after);
                assert!(now < prev, "graph {graph} seed {seed}: {now} !< {prev}");
                assert!((now - mv.codelength_after).abs() < 1e-9);
                prev = now;
            }
            assert!(r.codelength <= r.singleton_codelength.min(r.one_module_codelength) + 1e-12);
        }
    }
}
