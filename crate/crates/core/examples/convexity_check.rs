//! Smallest eigenvalue of the 2×2 convexity matrix over a grid, for the
//! logarithmic-capacity link cost and two simple comparison costs.

use mcra::model::{check_m_psd, CostParams, NegativeSinrCost, PsdGrid, SquaredFlowCost};

fn main() {
    let params = CostParams::default();
    let grid = PsdGrid::for_params(&params, 50);
    let cases: [(&str, &dyn mcra::model::LinkCost); 3] =
        [("F / (R ln(Kx) - F)", &params), ("-x", &NegativeSinrCost), ("F^2", &SquaredFlowCost)];
    for (name, cost) in cases {
        let r = check_m_psd(cost, &grid, 1e-10);
        println!(
            "{name:<20} min eigenvalue {:>12.4e} at (x, F) = ({:.3}, {:.3}) over {} points: {}",
            r.min_eigenvalue,
            r.at.0,
            r.at.1,
            r.points,
            if r.passed() { "PSD" } else { "not PSD" }
        );
    }
}
