//! Distributed sub-band allocation on a random mesh, with the feasibility
//! report and the per-link bands it produces.

use mcra::coloring::q_min;
use mcra::dsa::{check_spectrum_feasibility, run_dsa_with, DsaConfig, ProcessingOrder, TieBreak};
use mcra::graph::{interference_stats, ConnectivityGraph};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let g = ConnectivityGraph::random_connected(10, 0.3, &mut rng);
    let q = q_min(g.max_degree() + 1);
    let config = DsaConfig { first_node: None, order: ProcessingOrder::Seeded, tie_break: TieBreak::LowestBand };
    let (alloc, order) = run_dsa_with(&g, q, 4, &config).expect("q meets the bound");

    println!("{} nodes, {} links, Δ = {}", g.node_count(), g.link_count(), g.max_degree());
    println!("bands: {q} (link coloring would need {})", interference_stats(&g).max_degree + 1);
    println!("processing order: {:?}", order.iter().map(|&v| g.label(v)).collect::<Vec<_>>());
    for v in 0..g.node_count() {
        println!("  node {:>2} transmits on {:?}", g.label(v), alloc.node_bands(v).iter().collect::<Vec<_>>());
    }
    for (l, &(a, b)) in g.links().iter().enumerate().take(8) {
        println!(
            "  link {:>2} -> {:>2} on {:?}",
            g.label(a),
            g.label(b),
            alloc.link_bands(l).iter().collect::<Vec<_>>()
        );
    }
    let report = check_spectrum_feasibility(&g, &alloc);
    println!("feasible: {}", report.is_feasible());
}
