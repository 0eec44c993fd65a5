//! Joint power control, band splitting and routing from the uniform state,
//! printing the cost trace and the final optimality residuals.

use mcra::model::ControlState;
use mcra::optimizer::{solve, SolverConfig, SweepOrder};
use mcra::sample::{random_scenario, ScenarioShape};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let scn = random_scenario(&mut rng, &ScenarioShape::MEDIUM);
    let config = SolverConfig { tolerance: 1e-6, order: SweepOrder::Seeded(3), ..SolverConfig::default() };
    let start = ControlState::uniform(&scn, 0.5);
    let out = solve(&scn, &start, &config).expect("converges");

    println!("{} nodes, {} bands, {} sessions", scn.node_count(), scn.band_count(), scn.sessions().len());
    let every = (out.trace.len() / 10).max(1);
    let last = out.trace.len() - 1;
    for r in out.trace.iter().filter(|r| r.iteration % every == 0 || r.iteration == last) {
        println!("sweep {:>4}: cost {:.8}, worst residual {:.2e}", r.iteration, r.cost, r.worst_residual);
    }
    let rep = &out.report;
    println!(
        "residuals: routing {:.1e}, overflow {:.1e}, power {:.1e}/{:.1e}, intra-node {:.1e}",
        rep.routing, rep.overflow, rep.power_rho, rep.power_eta, rep.intra
    );
    println!("overflow fractions: {:?}", out.state.overflow);
}
