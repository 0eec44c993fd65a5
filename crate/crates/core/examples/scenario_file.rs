//! Loads a scenario description, allocates spectrum, optimizes and prints
//! the same records the command-line tool writes.

use mcra::cli::{check, optimize, parse_scenario_str, solver_config, spectrum};

const SCENARIO: &str = r#"
[graph]
edges = [[1, 2], [2, 1], [2, 3], [3, 2], [1, 3], [3, 1]]

[[node]]
id = 1
x = 0.0
y = 0.0

[[node]]
id = 2
x = 10.0
y = 0.0

[[node]]
id = 3
x = 5.0
y = 8.0

[channel]
noise = 1e-5
path_loss_exponent = 3.0

[[session]]
origin = 1
destination = 3
demand = 1.0
utility = { kind = "log", weight = 3.0 }

[cost]
r = 1.0
k = 50.0
"#;

fn main() {
    let loaded = parse_scenario_str(SCENARIO).expect("valid scenario");
    let (record, alloc) = spectrum(&loaded, 0).expect("allocation");
    println!("{}", toml::to_string(&record).unwrap());

    let scn = loaded.scenario(alloc).expect("model");
    let config = solver_config(&loaded.file.optimizer, 0);
    let (_, report) = optimize(&scn, loaded.file.optimizer.initial_overflow, &config).expect("optimize");
    println!("{}", toml::to_string(&report).unwrap());

    let checks = check(&scn, 0).expect("check");
    println!("gradient check passed: {}, convexity check passed: {}", checks.gradient.passed, checks.psd.passed);
}
