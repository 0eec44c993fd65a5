//! Powers, SINRs, flows and costs of the uniform starting state on a line
//! of four nodes with distance-based gains.

use mcra::coloring::q_min;
use mcra::dsa::run_dsa;
use mcra::graph::ConnectivityGraph;
use mcra::model::{evaluate, Channel, ControlState, CostParams, NetworkScenario, Session, Utility};

fn main() {
    let g = ConnectivityGraph::path(4);
    let alloc = run_dsa(&g, q_min(g.max_degree() + 1), 0).expect("allocation");
    let positions: Vec<(f64, f64)> = (0..4).map(|i| (20.0 * i as f64, 0.0)).collect();
    let channel = Channel::from_positions(alloc.band_count(), &positions, 3.0, 1e-7);
    let sessions = vec![Session { origin: 0, destination: 3, demand: 1.0, utility: Utility::Log { weight: 3.0 } }];
    let scn = NetworkScenario::new(g, alloc, channel, vec![1.0; 4], sessions, CostParams { r: 1.0, k: 100.0 })
        .expect("valid scenario");

    let st = ControlState::uniform(&scn, 0.5);
    let ev = evaluate(&scn, &st).expect("acyclic routing");
    let q = scn.band_count();
    for (l, &(a, b)) in scn.graph().links().iter().enumerate() {
        for band in scn.link_bands(l) {
            let e = l * q + band;
            println!(
                "{a}->{b} band {band}: P = {:.3}, SINR = {:.3e}, F = {:.3}, D = {:.4}",
                ev.physical.link_power[e], ev.physical.sinr[e], ev.flows.band[e], ev.band_cost[e]
            );
        }
    }
    println!("admitted {:.3}, overflow {:.3}", ev.flows.admitted[0], ev.flows.overflow[0]);
    println!("overflow cost {:.4}, total {:.4}", ev.overflow_cost[0], ev.total);
}
