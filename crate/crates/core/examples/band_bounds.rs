//! Minimum band counts: `q_min(Δ+1)` against an exhaustive search, and the
//! interference-graph bound `Δ(G̃)+1` used by link coloring.

use mcra::coloring::{brute_force_min_colors, central_binomial, q_min, SearchBudget};
use mcra::graph::{chromatic_number, interference_stats, ConnectivityGraph};

fn main() {
    println!("{:>4} {:>12} {:>6}", "n", "C(q, q/2)", "q_min");
    for n in [1, 2, 3, 4, 6, 10, 20, 35, 70, 126, 1000] {
        let q = q_min(n);
        println!("{n:>4} {:>12} {q:>6}", central_binomial(q));
    }

    let graphs = [
        ("path(5)", ConnectivityGraph::path(5)),
        ("cycle(5)", ConnectivityGraph::cycle(5)),
        ("star(4)", ConnectivityGraph::star(4)),
        ("K4", ConnectivityGraph::complete(4)),
        ("K6", ConnectivityGraph::complete(6)),
    ];
    println!();
    println!("{:<9} {:>4} {:>4} {:>11} {:>7} {:>9}", "graph", "Δ", "χ", "brute force", "q_min", "Δ(G̃)+1");
    for (name, g) in &graphs {
        let chi = chromatic_number(g, 16).value;
        let exact = brute_force_min_colors(g, SearchBudget::default()).expect("small graph");
        let bound = q_min(g.max_degree() + 1);
        let tilde = interference_stats(g).max_degree + 1;
        println!("{name:<9} {:>4} {chi:>4} {exact:>11} {bound:>7} {tilde:>9}", g.max_degree());
    }
}
