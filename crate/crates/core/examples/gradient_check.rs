//! Analytic gradients of every block against central differences at random
//! interior states.

use mcra::oracle::{finite_diff_check, Block, CheckOptions};
use mcra::sample::{random_interior_state, random_scenario, ScenarioShape};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for trial in 0..5 {
        let scn = random_scenario(&mut rng, &ScenarioShape::MEDIUM);
        let Some(st) = random_interior_state(&mut rng, &scn, 1e-3, 0.05, 200) else {
            println!("scenario {trial}: no interior state found");
            continue;
        };
        let report = finite_diff_check(&scn, &st, &Block::ALL, &CheckOptions::default()).expect("interior");
        print!("scenario {trial} ({} nodes, {} bands):", scn.node_count(), scn.band_count());
        for (block, err, n) in &report.blocks {
            print!(" {block:?} {err:.1e}/{n}");
        }
        println!(" -> {}", if report.passed() { "ok" } else { "FAIL" });
    }
}
