use mcra::cli::{ChannelSection, DsaSection, GraphSection, NodeEntry, OptimizerSection, ScenarioFile, SessionEntry};
use mcra::coloring::{assign_link_colors, check_oc_feasibility, equalize_family, q_min};
use mcra::colorset::{subsets_of_size, ColorSet};
use mcra::dsa::{
    apply_topology_change, check_spectrum_feasibility, run_dsa, run_dsa_in_order, DsaError, TieBreak, TopologyChange,
};
use mcra::graph::{chromatic_number, greedy_coloring, interference_stats, ConnectivityGraph};
use mcra::model::{evaluate, evaluate_physical, CostParams, Utility};
use mcra::sample::{random_scenario, random_state, ScenarioShape};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn graph(seed: u64, max_nodes: usize) -> ConnectivityGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=max_nodes);
    ConnectivityGraph::random_connected(n, rng.gen_range(0.0..0.5), &mut rng)
}

fn relabeled(g: &ConnectivityGraph, seed: u64) -> ConnectivityGraph {
    let mut labels: Vec<i64> = (0..g.node_count() as i64).map(|v| 10 * v + 7).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let edges: Vec<(i64, i64)> = g.links().iter().map(|&(a, b)| (labels[a], labels[b])).collect();
    ConnectivityGraph::build(&edges).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn interference_degree_dominates(seed in any::<u64>()) {
        let g = graph(seed, 20);
        let tilde = interference_stats(&g).max_degree;
        prop_assert!(tilde >= g.max_degree());
        prop_assert!(tilde + 1 >= q_min(g.max_degree() + 1));
    }

    #[test]
    fn greedy_coloring_is_proper_within_degree_bound(seed in any::<u64>()) {
        let g = graph(seed, 20);
        let colors = greedy_coloring(&g);
        prop_assert!(g.links().iter().all(|&(a, b)| colors[a] != colors[b]));
        prop_assert!(colors.iter().all(|&c| c <= g.max_degree()));
    }

    #[test]
    fn chromatic_number_ignores_labels(seed in any::<u64>()) {
        let g = graph(seed, 9);
        let h = relabeled(&g, seed ^ 1);
        prop_assert_eq!(chromatic_number(&g, 16), chromatic_number(&h, 16));
    }

    #[test]
    fn q_min_is_monotone(a in 1usize..5000, b in 1usize..5000) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(q_min(lo) <= q_min(hi));
    }

    #[test]
    fn link_colors_respect_duplexing(seed in any::<u64>()) {
        let g = graph(seed, 12);
        let alloc = run_dsa(&g, q_min(g.max_degree() + 1), seed).unwrap();
        let coloring = assign_link_colors(&g, alloc.family()).unwrap();
        prop_assert!(coloring.duplexing_violations(&g).is_empty());
        prop_assert!(coloring.coverage_violations().is_empty());
    }

    #[test]
    fn equalized_families_stay_distinct_and_incomparable(seed in any::<u64>(), q in 2usize..=8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let size = rng.gen_range(1..=q);
        let mut pool: Vec<ColorSet> = subsets_of_size(q, size).collect();
        pool.shuffle(&mut rng);
        pool.truncate(rng.gen_range(1..=pool.len().min(12)));
        // same-size distinct sets are pairwise incomparable
        let adjacency: Vec<(usize, usize)> =
            (0..pool.len()).flat_map(|a| (a + 1..pool.len()).map(move |b| (a, b))).collect();
        let out = equalize_family(q, &pool, &adjacency).unwrap();
        let target = (q / 2).max(1);
        prop_assert!(out.iter().all(|s| s.len() == target && s.is_subset(ColorSet::full(q))));
        for &(a, b) in &adjacency {
            prop_assert!(out[a].incomparable(out[b]));
        }
    }

    #[test]
    fn any_valid_processing_order_is_feasible(seed in any::<u64>()) {
        let g = graph(seed, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = g.node_count();
        let mut order = vec![rng.gen_range(0..n)];
        let mut done = vec![false; n];
        done[order[0]] = true;
        while order.len() < n {
            let frontier: Vec<usize> =
                (0..n).filter(|&v| !done[v] && g.neighbors(v).iter().any(|&u| done[u])).collect();
            let v = *frontier.choose(&mut rng).unwrap();
            done[v] = true;
            order.push(v);
        }
        let tie = if seed % 2 == 0 { TieBreak::LowestBand } else { TieBreak::Seeded };
        let alloc = run_dsa_in_order(&g, q_min(g.max_degree() + 1), &order, tie, &mut rng).unwrap();
        prop_assert!(check_spectrum_feasibility(&g, &alloc).is_feasible());
        prop_assert!(check_oc_feasibility(&g, alloc.family()).is_feasible());
    }

    #[test]
    fn leaves_keep_feasibility(seed in any::<u64>()) {
        let g = graph(seed, 14);
        let alloc = run_dsa(&g, q_min(g.max_degree() + 1), seed).unwrap();
        let node = g.labels()[(seed % g.node_count() as u64) as usize];
        match apply_topology_change(&alloc, &g, &TopologyChange::Leave { node }, seed) {
            Ok((g2, a2)) => prop_assert!(check_spectrum_feasibility(&g2, &a2).is_feasible()),
            Err(DsaError::Disconnected { graph, allocation, .. }) => {
                prop_assert!(check_spectrum_feasibility(&graph, &allocation).is_feasible())
            }
            Err(e) => prop_assert!(false, "{e}"),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn evaluation_accounting_holds(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scn = random_scenario(&mut rng, &ScenarioShape::MEDIUM);
        let st = random_state(&mut rng, &scn);
        let q = scn.band_count();
        let phys = evaluate_physical(&scn, &st);
        for i in 0..scn.node_count() {
            let used: f64 = (0..q).map(|b| phys.node_power[i * q + b]).sum();
            prop_assert!(used <= scn.budgets()[i] * (1.0 + 1e-12));
        }
        let ev = evaluate(&scn, &st).unwrap();
        let g = scn.graph();
        for (w, s) in scn.sessions().iter().enumerate() {
            prop_assert_eq!(ev.flows.admitted[w] + ev.flows.overflow[w], s.demand);
            for v in 0..g.node_count() {
                if v == s.origin || v == s.destination {
                    continue;
                }
                let inflow: f64 = g.in_links(v).iter().map(|&l| ev.flows.f[w][l]).sum();
                let outflow: f64 = g.out_links(v).iter().map(|&l| ev.flows.f[w][l]).sum();
                prop_assert!((inflow - outflow).abs() <= 1e-12 * s.demand.max(1.0));
            }
        }
        for l in 0..g.link_count() {
            let split: f64 = scn.link_bands(l).iter().map(|b| ev.flows.band[l * q + b]).sum();
            prop_assert!((split - ev.flows.link[l]).abs() <= 1e-12 * ev.flows.link[l].max(1.0));
        }
    }

    #[test]
    fn link_cost_is_monotone(r in 0.5f64..2.0, k in 5.0f64..200.0, x in 0.05f64..50.0, frac in 0.0f64..0.95) {
        let p = CostParams { r, k };
        let c = p.capacity(x);
        prop_assume!(c > 0.0);
        let f = frac * c;
        prop_assert!(p.cost(x * 1.1, f) <= p.cost(x, f));
        prop_assert!(p.cost(x, f * 1.01 + 1e-9) >= p.cost(x, f));
    }

    #[test]
    fn scenario_files_round_trip(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = graph(seed, 8);
        let labels = g.labels().to_vec();
        let file = ScenarioFile {
            graph: GraphSection { edges: g.links().iter().map(|&(a, b)| (labels[a], labels[b])).collect() },
            nodes: labels
                .iter()
                .map(|&id| NodeEntry { id, x: Some(rng.gen_range(0.0..100.0)), y: Some(rng.gen_range(0.0..100.0)), budget: Some(rng.gen_range(0.5..2.0)) })
                .collect(),
            channel: ChannelSection { noise: 1e-6, path_loss_exponent: Some(3.0), default_gain: None, gain: vec![], node_noise: vec![] },
            sessions: vec![SessionEntry {
                origin: labels[0],
                destination: labels[labels.len() - 1],
                demand: rng.gen_range(0.1..3.0),
                utility: Utility::Log { weight: rng.gen_range(1.0..3.0) },
            }],
            cost: CostParams { r: 1.0, k: rng.gen_range(10.0..100.0) },
            optimizer: OptimizerSection { seed: rng.gen(), ..OptimizerSection::default() },
            dsa: DsaSection { seed: rng.gen(), ..DsaSection::default() },
            allocation: None,
        };
        let text = file.to_toml();
        let back: ScenarioFile = toml::from_str(&text).unwrap();
        prop_assert_eq!(&back, &file);
        prop_assert_eq!(back.to_toml(), text);
        let loaded = back.load();
        prop_assert!(loaded.is_ok(), "{:?}", loaded.err());
    }
}
