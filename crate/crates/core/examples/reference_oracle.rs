//! The optimizer against an independent multi-start reference on tiny
//! instances.

use mcra::model::ControlState;
use mcra::optimizer::{solve, SolverConfig};
use mcra::oracle::reference_solve_small;
use mcra::sample::{random_scenario, ScenarioShape};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let config = SolverConfig { tolerance: 1e-7, max_iters: 20_000, ..SolverConfig::default() };
    for trial in 0..4 {
        let scn = random_scenario(&mut rng, &ScenarioShape::SMALL);
        let ours = solve(&scn, &ControlState::uniform(&scn, 0.5), &config).expect("solve").cost();
        let reference = reference_solve_small(&scn, 6, 20_000).expect("small instance");
        println!(
            "instance {trial}: solver {ours:.6}, reference {:.6} (restarts {:?}), gap {:+.2e}",
            reference.best,
            reference.restarts.iter().map(|c| format!("{c:.4}")).collect::<Vec<_>>(),
            (ours - reference.best) / reference.best
        );
    }
}
