//! A node joins and another leaves a running allocation; only links at the
//! changed node are reassigned.

use mcra::coloring::q_min;
use mcra::dsa::{apply_topology_change, check_spectrum_feasibility, run_dsa, TopologyChange};
use mcra::graph::ConnectivityGraph;

fn bands(g: &ConnectivityGraph, alloc: &mcra::dsa::SpectrumAllocation) -> Vec<(i64, Vec<usize>)> {
    (0..g.node_count()).map(|v| (g.label(v), alloc.node_bands(v).iter().collect())).collect()
}

fn main() {
    let g = ConnectivityGraph::cycle(6);
    let q = q_min(g.max_degree() + 1) + 1;
    let alloc = run_dsa(&g, q, 1).expect("allocation");
    println!("before: {:?}", bands(&g, &alloc));

    let join = TopologyChange::Join { node: 100, neighbors: vec![g.label(0), g.label(3)] };
    let (g, alloc) = apply_topology_change(&alloc, &g, &join, 2).expect("join");
    println!("after join of 100: {:?}", bands(&g, &alloc));
    println!("feasible: {}", check_spectrum_feasibility(&g, &alloc).is_feasible());

    let leave = TopologyChange::Leave { node: g.label(1) };
    let (g, alloc) = apply_topology_change(&alloc, &g, &leave, 3).expect("leave");
    println!("after leave: {:?}", bands(&g, &alloc));
    println!("feasible: {}", check_spectrum_feasibility(&g, &alloc).is_feasible());
}
