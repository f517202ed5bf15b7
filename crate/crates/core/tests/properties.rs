use std::collections::BTreeSet;

use proptest::prelude::*;

use shardsched::conflict::{conflicts, greedy_color, ConflictGraph};
use shardsched::cover::{build_hierarchy, home_cluster, validate_cover};
use shardsched::metrics::{compute_bounds, BoundParams};
use shardsched::topology::{build_graph, TopologySpec};
use shardsched::types::{Rate, ShardId};
use shardsched::workload::{check_admissibility, generate_trace, Admissibility, Pattern, WorkloadParams};

fn adjacency(n: usize, bits: &[bool]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    let mut k = 0;
    for i in 0..n {
        for j in i + 1..n {
            if bits[k % bits.len().max(1)] {
                adj[i].push(j);
                adj[j].push(i);
            }
            k += 1;
        }
    }
    adj
}

fn spec() -> impl Strategy<Value = TopologySpec> {
    prop_oneof![
        (1u32..=24).prop_map(|shards| TopologySpec::Clique { shards }),
        (1u32..=24).prop_map(|shards| TopologySpec::Line { shards }),
        (3u32..=24).prop_map(|shards| TopologySpec::Ring { shards }),
        (1u32..=5, 1u32..=5).prop_map(|(rows, cols)| TopologySpec::Grid { rows, cols }),
        (4u32..=24, any::<u64>()).prop_map(|(shards, seed)| TopologySpec::RandomConnected { shards, edge_prob: 0.35, seed }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn greedy_coloring_is_proper_and_within_degree(n in 0usize..40, bits in prop::collection::vec(any::<bool>(), 1..64)) {
        let adj = adjacency(n, &bits);
        let g = ConflictGraph::from_adjacency(adj.clone());
        let c = greedy_color(&g);
        for (i, ns) in adj.iter().enumerate() {
            for &j in ns {
                prop_assert_ne!(c.colors[i], c.colors[j]);
            }
        }
        let delta = adj.iter().map(Vec::len).max().unwrap_or(0);
        prop_assert!(c.lambda as usize <= delta + 1);
        let used: BTreeSet<u32> = c.colors.iter().copied().collect();
        prop_assert_eq!(used.len(), c.lambda as usize);
    }

    #[test]
    fn cover_holds_on_generated_graphs(spec in spec()) {
        let g = build_graph(&spec).unwrap();
        let h = build_hierarchy(&g);
        let report = validate_cover(&h, &g).unwrap();
        prop_assert!(report.passed);
        // every shard's chain starts at its singleton and climbs strictly
        for s in g.shards() {
            let chain = h.chain(s);
            prop_assert_eq!(chain[0], h.singleton(s));
            for w in chain.windows(2) {
                prop_assert!(h.cluster(w[0]).height < h.cluster(w[1]).height);
                prop_assert!(h.cluster(w[1]).members.contains(&s));
            }
        }
    }

    #[test]
    fn home_cluster_contains_the_neighborhood(spec in spec(), home in 0u32..25, far in 0u32..25) {
        let g = build_graph(&spec).unwrap();
        let s = g.shard_count();
        let (home, far) = (ShardId(home % s), ShardId(far % s));
        let h = build_hierarchy(&g);
        let dests: BTreeSet<ShardId> = [home, far].into();
        let c = h.cluster(home_cluster(&h, home, &dests, &g));
        let ball = g.ball(home, u64::from(g.dist(home, far)));
        prop_assert!(ball.is_subset(&c.members));
    }

    #[test]
    fn generated_traces_are_admissible(
        num in 1i64..8,
        den in 8i64..128,
        b in 1u32..4,
        k in 1u32..5,
        p in 0usize..4,
        seed in any::<u64>(),
    ) {
        let g = build_graph(&TopologySpec::Grid { rows: 3, cols: 3 }).unwrap();
        let rho = Rate::new(num, den);
        let params = WorkloadParams::new(rho, b, k, 300, Pattern::ALL[p], seed);
        let trace = generate_trace(&g, &params).unwrap();
        prop_assert_eq!(check_admissibility(&trace, rho, b), Admissibility::Ok);
        for t in &trace.txns {
            prop_assert!(t.shards().len() as u32 <= k);
            prop_assert!(t.gen_time <= 300);
        }
    }

    #[test]
    fn conflict_graph_matches_pairwise_relation(seed in any::<u64>()) {
        let g = build_graph(&TopologySpec::Clique { shards: 4 }).unwrap();
        let mut params = WorkloadParams::new(Rate::new(1, 4), 3, 3, 40, Pattern::Uniform, seed);
        params.account_space = 3;
        let trace = generate_trace(&g, &params).unwrap();
        let cg = ConflictGraph::build(&trace.txns);
        for i in 0..trace.txns.len() {
            for j in i + 1..trace.txns.len() {
                prop_assert_eq!(cg.has_edge(i, j), conflicts(&trace.txns[i], &trace.txns[j]));
            }
        }
    }

    #[test]
    fn bounds_grow_with_rate(a in 1i64..64, c in 1i64..64, s in 1u64..64, k in 1u64..8) {
        let lo = Rate::new(a.min(c), 64);
        let hi = Rate::new(a.max(c), 64);
        let p = BoundParams { s, k, b: 2, frak_d: 5, rho: lo, diameter: 3, overhead: Some(6) };
        let x = compute_bounds(&p);
        let y = compute_bounds(&BoundParams { rho: hi, ..p });
        prop_assert!(x.queue_bound <= y.queue_bound);
        prop_assert_eq!(x.latency_bound, y.latency_bound);
        prop_assert!(x.multi.unwrap().queue_bound <= y.multi.unwrap().queue_bound);
        prop_assert!(x.multi.unwrap().rho_threshold <= x.rho_prime);
    }
}
