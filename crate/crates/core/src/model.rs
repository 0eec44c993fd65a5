//! Physical and traffic model: powers, SINRs, flows and the total cost `E`.
//!
//! Every per-(link, band) quantity is stored densely at index
//! `link * Q + band`; per-(node, band) quantities at `node * Q + band`.
//! Entries for bands not active on a link (or not used by a node) are zero.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::colorset::ColorSet;
use crate::dsa::{check_spectrum_feasibility, SpectrumAllocation};
use crate::graph::{ConnectivityGraph, LinkId, NodeId};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("routing subgraph of session {session} contains a cycle")]
    CycleDetected { session: usize },
    #[error("point x={x}, F={f} is outside the finite-cost domain")]
    OutOfDomain { x: f64, f: f64 },
    #[error("invalid scenario: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("state does not match the scenario: {}", .0.join("; "))]
    InfeasibleState(Vec<String>),
}

/// Capacity `C(x) = R ln(Kx)` and the M/M/1 link cost `F / (C(x) - F)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostParams {
    pub r: f64,
    pub k: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams { r: 1.0, k: 10.0 }
    }
}

impl CostParams {
    pub fn capacity(&self, x: f64) -> f64 {
        if x <= 0.0 {
            f64::NEG_INFINITY
        } else {
            self.r * (self.k * x).ln()
        }
    }

    /// `D(x, F)`, with `D(x, 0) = 0` for every `x` and `+∞` at or past the
    /// capacity barrier.
    pub fn cost(&self, x: f64, f: f64) -> f64 {
        if f <= 0.0 {
            return 0.0;
        }
        let c = self.capacity(x);
        if c <= f {
            f64::INFINITY
        } else {
            f / (c - f)
        }
    }
}

/// First and second partials of a link cost at one point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostDerivatives {
    pub dx: f64,
    pub df: f64,
    pub dxx: f64,
    pub dff: f64,
    pub dxf: f64,
}

/// Closed-form partials of `F / (R ln(Kx) - F)`.
pub fn cost_derivatives(x: f64, f: f64, params: &CostParams) -> Result<CostDerivatives, ModelError> {
    let c = params.capacity(x);
    if !(x > 0.0) || f < 0.0 || !(c > f) || !(c > 0.0) {
        return Err(ModelError::OutOfDomain { x, f });
    }
    let gap = c - f;
    let c1 = params.r / x;
    let c2 = -params.r / (x * x);
    Ok(CostDerivatives {
        dx: -f * c1 / (gap * gap),
        df: c / (gap * gap),
        dxx: -f * c2 / (gap * gap) + 2.0 * f * c1 * c1 / (gap * gap * gap),
        dff: 2.0 * c / (gap * gap * gap),
        dxf: -c1 * (c + f) / (gap * gap * gap),
    })
}

/// A two-argument link cost `D(x, F)` whose curvature can be inspected.
pub trait LinkCost {
    fn cost(&self, x: f64, f: f64) -> f64;
    fn derivatives(&self, x: f64, f: f64) -> Option<CostDerivatives>;
    /// Largest admissible flow at SINR `x`, if the cost has a barrier.
    fn capacity(&self, _x: f64) -> Option<f64> {
        None
    }
}

impl LinkCost for CostParams {
    fn cost(&self, x: f64, f: f64) -> f64 {
        CostParams::cost(self, x, f)
    }

    fn derivatives(&self, x: f64, f: f64) -> Option<CostDerivatives> {
        cost_derivatives(x, f, self).ok()
    }

    fn capacity(&self, x: f64) -> Option<f64> {
        Some(CostParams::capacity(self, x))
    }
}

/// `D(x, F) = -x`.
#[derive(Debug, Clone, Copy, Default)]
pub struct NegativeSinrCost;

impl LinkCost for NegativeSinrCost {
    fn cost(&self, x: f64, _f: f64) -> f64 {
        -x
    }

    fn derivatives(&self, _x: f64, _f: f64) -> Option<CostDerivatives> {
        Some(CostDerivatives { dx: -1.0, ..Default::default() })
    }
}

/// `D(x, F) = F²`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SquaredFlowCost;

impl LinkCost for SquaredFlowCost {
    fn cost(&self, _x: f64, f: f64) -> f64 {
        f * f
    }

    fn derivatives(&self, _x: f64, f: f64) -> Option<CostDerivatives> {
        Some(CostDerivatives { df: 2.0 * f, dff: 2.0, ..Default::default() })
    }
}

/// The 2×2 matrix whose semidefiniteness is equivalent to joint convexity
/// of a link cost in log-powers and flow.
pub fn m_matrix(d: &CostDerivatives, x: f64) -> [[f64; 2]; 2] {
    let off = d.dxf * x;
    [[d.dxx * x * x + d.dx * x, off], [off, d.dff]]
}

pub fn min_eigenvalue(m: &[[f64; 2]; 2]) -> f64 {
    let mean = 0.5 * (m[0][0] + m[1][1]);
    let half_diff = 0.5 * (m[0][0] - m[1][1]);
    mean - (half_diff * half_diff + m[0][1] * m[1][0]).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsdGrid {
    pub x_min: f64,
    pub x_max: f64,
    /// Upper flow limit for costs without a capacity barrier.
    pub f_max: f64,
    pub points: usize,
    /// Fraction of capacity kept clear of the barrier.
    pub headroom: f64,
}

impl PsdGrid {
    /// A grid strictly inside the finite-cost domain of `params`.
    pub fn for_params(params: &CostParams, points: usize) -> Self {
        let x_min = 1.5 / params.k.max(f64::MIN_POSITIVE);
        PsdGrid { x_min, x_max: 100.0 * x_min, f_max: 10.0, points, headroom: 0.05 }
    }

    fn linspace(lo: f64, hi: f64, n: usize, k: usize) -> f64 {
        if n <= 1 {
            lo
        } else {
            lo + (hi - lo) * k as f64 / (n - 1) as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsdReport {
    pub min_eigenvalue: f64,
    pub at: (f64, f64),
    pub points: usize,
    pub tolerance: f64,
}

impl PsdReport {
    pub fn passed(&self) -> bool {
        self.min_eigenvalue >= -self.tolerance
    }
}

/// Minimum eigenvalue of the M matrix over a grid of the finite-cost domain.
pub fn check_m_psd<C: LinkCost + ?Sized>(cost: &C, grid: &PsdGrid, tolerance: f64) -> PsdReport {
    let mut report = PsdReport { min_eigenvalue: f64::INFINITY, at: (f64::NAN, f64::NAN), points: 0, tolerance };
    for a in 0..grid.points {
        let x = PsdGrid::linspace(grid.x_min, grid.x_max, grid.points, a);
        let f_hi = match cost.capacity(x) {
            Some(c) => (c * (1.0 - grid.headroom)).min(grid.f_max),
            None => grid.f_max,
        };
        if !(f_hi >= 0.0) {
            continue;
        }
        for b in 0..grid.points {
            let f = PsdGrid::linspace(0.0, f_hi, grid.points, b);
            let Some(d) = cost.derivatives(x, f) else { continue };
            let ev = min_eigenvalue(&m_matrix(&d, x));
            report.points += 1;
            if ev < report.min_eigenvalue {
                report.min_eigenvalue = ev;
                report.at = (x, f);
            }
        }
    }
    report
}

/// Session utility `U_w`; the overflow link cost is `U(r̄) - U(r̄ - F_w)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Utility {
    /// `a ln(1 + r)`
    Log { weight: f64 },
    /// `a r`
    Linear { weight: f64 },
}

impl Default for Utility {
    fn default() -> Self {
        Utility::Log { weight: 3.0 }
    }
}

impl Utility {
    pub fn weight(&self) -> f64 {
        match *self {
            Utility::Log { weight } | Utility::Linear { weight } => weight,
        }
    }

    pub fn value(&self, r: f64) -> f64 {
        match *self {
            Utility::Log { weight } => weight * r.ln_1p(),
            Utility::Linear { weight } => weight * r,
        }
    }

    pub fn overflow_cost(&self, demand: f64, overflow: f64) -> f64 {
        self.value(demand) - self.value(demand - overflow)
    }

    /// `D_w'(F_w) = U'(r̄ - F_w)`.
    pub fn overflow_marginal(&self, demand: f64, overflow: f64) -> f64 {
        match *self {
            Utility::Log { weight } => weight / (1.0 + demand - overflow),
            Utility::Linear { weight } => weight,
        }
    }

    /// `D_w''(F_w) = -U''(r̄ - F_w)`.
    pub fn overflow_curvature(&self, demand: f64, overflow: f64) -> f64 {
        match *self {
            Utility::Log { weight } => {
                let s = 1.0 + demand - overflow;
                weight / (s * s)
            }
            Utility::Linear { .. } => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Session {
    pub origin: NodeId,
    pub destination: NodeId,
    pub demand: f64,
    #[serde(default)]
    pub utility: Utility,
}

/// Per-band path gains `G^q_mj` and noise powers `N^q_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    bands: usize,
    nodes: usize,
    gain: Vec<f64>,
    noise: Vec<f64>,
}

impl Channel {
    pub fn new(bands: usize, nodes: usize, gain: f64, noise: f64) -> Self {
        Channel { bands, nodes, gain: vec![gain; bands * nodes * nodes], noise: vec![noise; bands * nodes] }
    }

    /// Gains `d^-α` from planar positions, identical on every band.
    pub fn from_positions(bands: usize, positions: &[(f64, f64)], alpha: f64, noise: f64) -> Self {
        let n = positions.len();
        let mut ch = Channel::new(bands, n, 0.0, noise);
        for q in 0..bands {
            for m in 0..n {
                for j in 0..n {
                    if m != j {
                        let (dx, dy) = (positions[m].0 - positions[j].0, positions[m].1 - positions[j].1);
                        ch.set_gain(q, m, j, dx.hypot(dy).powf(-alpha));
                    }
                }
            }
        }
        ch
    }

    pub fn band_count(&self) -> usize {
        self.bands
    }

    pub fn node_count(&self) -> usize {
        self.nodes
    }

    /// Gain from transmitter `m` to receiver `j` on band `q`.
    pub fn gain(&self, q: usize, m: NodeId, j: NodeId) -> f64 {
        self.gain[(q * self.nodes + m) * self.nodes + j]
    }

    pub fn set_gain(&mut self, q: usize, m: NodeId, j: NodeId, g: f64) {
        self.gain[(q * self.nodes + m) * self.nodes + j] = g;
    }

    pub fn noise(&self, q: usize, j: NodeId) -> f64 {
        self.noise[q * self.nodes + j]
    }

    pub fn set_noise(&mut self, q: usize, j: NodeId, n: f64) {
        self.noise[q * self.nodes + j] = n;
    }
}

/// An immutable problem instance.
#[derive(Debug, Clone)]
pub struct NetworkScenario {
    graph: ConnectivityGraph,
    allocation: SpectrumAllocation,
    channel: Channel,
    budgets: Vec<f64>,
    sessions: Vec<Session>,
    cost: CostParams,
    used_bands: Vec<ColorSet>,
}

impl NetworkScenario {
    pub fn new(
        graph: ConnectivityGraph,
        allocation: SpectrumAllocation,
        channel: Channel,
        budgets: Vec<f64>,
        sessions: Vec<Session>,
        cost: CostParams,
    ) -> Result<Self, ModelError> {
        let n = graph.node_count();
        let q = allocation.band_count();
        let mut errs = Vec::new();
        if allocation.coloring().sets().len() != graph.link_count() || allocation.family().len() != n {
            errs.push("allocation does not match the graph".to_string());
        } else {
            let report = check_spectrum_feasibility(&graph, &allocation);
            for (a, b) in &report.uncovered {
                errs.push(format!("link ({}, {}) has no active band", graph.label(*a), graph.label(*b)));
            }
            for (v, band) in &report.duplexing {
                errs.push(format!("node {} both sends and receives on band {band}", graph.label(*v)));
            }
        }
        if channel.band_count() != q || channel.node_count() != n {
            errs.push(format!(
                "channel is {}×{} but the scenario has {q} bands and {n} nodes",
                channel.band_count(),
                channel.node_count()
            ));
        } else {
            for band in 0..q {
                for j in 0..n {
                    if !(channel.noise(band, j) > 0.0) || !channel.noise(band, j).is_finite() {
                        errs.push(format!("noise at node {} band {band} must be positive", graph.label(j)));
                    }
                    for m in 0..n {
                        let g = channel.gain(band, m, j);
                        if !(g >= 0.0) || !g.is_finite() {
                            errs.push(format!(
                                "gain {}→{} band {band} must be finite and ≥ 0",
                                graph.label(m),
                                graph.label(j)
                            ));
                        }
                    }
                }
            }
        }
        if budgets.len() != n {
            errs.push(format!("{} power budgets for {n} nodes", budgets.len()));
        }
        for (v, &p) in budgets.iter().enumerate() {
            if !(p > 0.0) || !p.is_finite() {
                errs.push(format!("power budget of node {v} must be positive"));
            }
        }
        for (w, s) in sessions.iter().enumerate() {
            if s.origin >= n || s.destination >= n {
                errs.push(format!("session {w} refers to an unknown node"));
            } else if s.origin == s.destination {
                errs.push(format!("session {w} has origin equal to destination"));
            }
            if !(s.demand > 0.0) || !s.demand.is_finite() {
                errs.push(format!("session {w} demand must be positive"));
            }
            if !(s.utility.weight() > 0.0) {
                errs.push(format!("session {w} utility weight must be positive"));
            }
        }
        if !(cost.r > 0.0) || !(cost.k > 0.0) {
            errs.push("cost parameters R and K must be positive".to_string());
        }
        if !errs.is_empty() {
            return Err(ModelError::Invalid(errs));
        }
        let used_bands = (0..n)
            .map(|v| graph.out_links(v).iter().fold(ColorSet::EMPTY, |acc, &l| acc.union(allocation.link_bands(l))))
            .collect();
        Ok(NetworkScenario { graph, allocation, channel, budgets, sessions, cost, used_bands })
    }

    pub fn graph(&self) -> &ConnectivityGraph {
        &self.graph
    }

    pub fn allocation(&self) -> &SpectrumAllocation {
        &self.allocation
    }

    pub fn channel(&self) -> &Channel {
        &self.channel
    }

    pub fn budgets(&self) -> &[f64] {
        &self.budgets
    }

    pub fn sessions(&self) -> &[Session] {
        &self.sessions
    }

    pub fn cost(&self) -> &CostParams {
        &self.cost
    }

    pub fn band_count(&self) -> usize {
        self.allocation.band_count()
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    pub fn link_count(&self) -> usize {
        self.graph.link_count()
    }

    /// Dense index of `(link, band)`.
    pub fn entry(&self, link: LinkId, band: usize) -> usize {
        link * self.band_count() + band
    }

    /// Dense index of `(node, band)`.
    pub fn node_entry(&self, node: NodeId, band: usize) -> usize {
        node * self.band_count() + band
    }

    pub fn link_bands(&self, link: LinkId) -> ColorSet {
        self.allocation.link_bands(link)
    }

    /// Bands on which `node` has at least one active outgoing link. These
    /// carry the node's power variables.
    pub fn used_bands(&self, node: NodeId) -> ColorSet {
        self.used_bands[node]
    }

    /// Outgoing links of `node` active on `band`.
    pub fn active_out_links(&self, node: NodeId, band: usize) -> Vec<LinkId> {
        self.graph.out_links(node).iter().copied().filter(|&l| self.link_bands(l).contains(band)).collect()
    }

    /// A copy with different sessions.
    pub fn with_sessions(&self, sessions: Vec<Session>) -> Result<Self, ModelError> {
        NetworkScenario::new(
            self.graph.clone(),
            self.allocation.clone(),
            self.channel.clone(),
            self.budgets.clone(),
            sessions,
            self.cost,
        )
    }
}

/// Node-based control variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlState {
    /// `ρ_i(q)` at `node * Q + band`.
    pub rho: Vec<f64>,
    /// `η_ij(q)` at `link * Q + band`.
    pub eta: Vec<f64>,
    /// `μ_ij(q)` at `link * Q + band`.
    pub mu: Vec<f64>,
    /// `φ_w` per session.
    pub overflow: Vec<f64>,
    /// `φ_ij(w)` as `phi[w][link]`.
    pub phi: Vec<Vec<f64>>,
}

impl ControlState {
    /// Full power split evenly over used bands, even power and flow splits,
    /// routing along shortest-hop paths, and the given overflow fraction.
    pub fn uniform(scn: &NetworkScenario, overflow: f64) -> Self {
        let g = scn.graph();
        let q = scn.band_count();
        let mut st = ControlState {
            rho: vec![0.0; g.node_count() * q],
            eta: vec![0.0; g.link_count() * q],
            mu: vec![0.0; g.link_count() * q],
            overflow: vec![overflow; scn.sessions().len()],
            phi: Vec::with_capacity(scn.sessions().len()),
        };
        for v in 0..g.node_count() {
            let used = scn.used_bands(v);
            for band in used {
                st.rho[scn.node_entry(v, band)] = 1.0 / used.len() as f64;
                let links = scn.active_out_links(v, band);
                for &l in &links {
                    st.eta[scn.entry(l, band)] = 1.0 / links.len() as f64;
                }
            }
        }
        for l in 0..g.link_count() {
            let bands = scn.link_bands(l);
            for band in bands {
                st.mu[scn.entry(l, band)] = 1.0 / bands.len() as f64;
            }
        }
        for s in scn.sessions() {
            st.phi.push(shortest_hop_routing(g, s.destination));
        }
        st
    }

    /// Checks every constraint on the control variables.
    pub fn check(&self, scn: &NetworkScenario, tol: f64) -> Result<(), ModelError> {
        let g = scn.graph();
        let q = scn.band_count();
        let mut errs = Vec::new();
        if self.rho.len() != g.node_count() * q
            || self.eta.len() != g.link_count() * q
            || self.mu.len() != g.link_count() * q
            || self.overflow.len() != scn.sessions().len()
            || self.phi.len() != scn.sessions().len()
            || self.phi.iter().any(|p| p.len() != g.link_count())
        {
            return Err(ModelError::InfeasibleState(vec!["array sizes".to_string()]));
        }
        let in_unit = |v: f64| (-tol..=1.0 + tol).contains(&v);
        for v in 0..g.node_count() {
            let used = scn.used_bands(v);
            let mut sum = 0.0;
            for band in 0..q {
                let r = self.rho[scn.node_entry(v, band)];
                if !used.contains(band) && r != 0.0 {
                    errs.push(format!("ρ on unused band {band} of node {v}"));
                }
                if !in_unit(r) {
                    errs.push(format!("ρ_{v}({band}) = {r}"));
                }
                sum += r;
            }
            if sum > 1.0 + tol {
                errs.push(format!("Σρ at node {v} is {sum}"));
            }
            for band in used {
                let s: f64 = scn.active_out_links(v, band).iter().map(|&l| self.eta[scn.entry(l, band)]).sum();
                if (s - 1.0).abs() > tol {
                    errs.push(format!("Ση at node {v} band {band} is {s}"));
                }
            }
        }
        for l in 0..g.link_count() {
            let bands = scn.link_bands(l);
            let mut s = 0.0;
            for band in 0..q {
                let (e, m) = (self.eta[scn.entry(l, band)], self.mu[scn.entry(l, band)]);
                if !bands.contains(band) && (e != 0.0 || m != 0.0) {
                    errs.push(format!("η or μ on inactive band {band} of link {l}"));
                }
                if !in_unit(e) || !in_unit(m) {
                    errs.push(format!("η or μ out of range on link {l} band {band}"));
                }
                s += m;
            }
            if (s - 1.0).abs() > tol {
                errs.push(format!("Σμ on link {l} is {s}"));
            }
        }
        for (w, sess) in scn.sessions().iter().enumerate() {
            if !in_unit(self.overflow[w]) {
                errs.push(format!("φ_w of session {w} is {}", self.overflow[w]));
            }
            for v in 0..g.node_count() {
                let s: f64 = g.out_links(v).iter().map(|&l| self.phi[w][l]).sum();
                if g.out_links(v).iter().any(|&l| !in_unit(self.phi[w][l])) {
                    errs.push(format!("φ out of range at node {v} session {w}"));
                }
                let want = if v == sess.destination { 0.0 } else { 1.0 };
                if (s - want).abs() > tol {
                    errs.push(format!("Σφ at node {v} session {w} is {s}"));
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ModelError::InfeasibleState(errs))
        }
    }
}

/// Splits evenly over neighbors one hop closer to `destination`.
pub fn shortest_hop_routing(g: &ConnectivityGraph, destination: NodeId) -> Vec<f64> {
    let dist = g.hop_distances(destination);
    let mut phi = vec![0.0; g.link_count()];
    for v in 0..g.node_count() {
        if v == destination {
            continue;
        }
        let closer: Vec<LinkId> = g.out_links(v).iter().copied().filter(|&l| dist[g.link(l).1] < dist[v]).collect();
        for &l in &closer {
            phi[l] = 1.0 / closer.len() as f64;
        }
    }
    phi
}

/// Powers, SINRs and interference-plus-noise terms.
#[derive(Debug, Clone, PartialEq)]
pub struct Physical {
    /// `P_i(q)` at `node * Q + band`.
    pub node_power: Vec<f64>,
    /// `P_ij(q)` at `link * Q + band`.
    pub link_power: Vec<f64>,
    pub sinr: Vec<f64>,
    /// `IN_ij(q)`.
    pub interference: Vec<f64>,
}

pub fn evaluate_physical(scn: &NetworkScenario, st: &ControlState) -> Physical {
    let g = scn.graph();
    let q = scn.band_count();
    let ch = scn.channel();
    let n = g.node_count();
    let mut node_power = vec![0.0; n * q];
    for v in 0..n {
        for band in 0..q {
            node_power[v * q + band] = scn.budgets()[v] * st.rho[v * q + band];
        }
    }
    let size = g.link_count() * q;
    let (mut link_power, mut sinr, mut interference) = (vec![0.0; size], vec![0.0; size], vec![0.0; size]);
    for (l, &(i, j)) in g.links().iter().enumerate() {
        for band in scn.link_bands(l) {
            let e = l * q + band;
            let pi = node_power[i * q + band];
            let gij = ch.gain(band, i, j);
            let own_other: f64 =
                scn.active_out_links(i, band).iter().filter(|&&k| k != l).map(|&k| st.eta[k * q + band]).sum();
            let mut others = ch.noise(band, j);
            for m in 0..n {
                if m != i && m != j {
                    others += ch.gain(band, m, j) * node_power[m * q + band];
                }
            }
            let signal = gij * pi * st.eta[e];
            let inn = gij * pi * own_other + others;
            link_power[e] = pi * st.eta[e];
            interference[e] = inn;
            sinr[e] = if signal > 0.0 { signal / inn } else { 0.0 };
        }
    }
    Physical { node_power, link_power, sinr, interference }
}

/// Session and link flows.
#[derive(Debug, Clone, PartialEq)]
pub struct Flows {
    /// `t_i(w)` as `t[w][node]`.
    pub t: Vec<Vec<f64>>,
    /// `f_ij(w)` as `f[w][link]`.
    pub f: Vec<Vec<f64>>,
    /// `F_ij`.
    pub link: Vec<f64>,
    /// `F_ij(q)` at `link * Q + band`.
    pub band: Vec<f64>,
    /// `F_w`.
    pub overflow: Vec<f64>,
    /// `r_w`.
    pub admitted: Vec<f64>,
    /// A topological order of every node for each session's routing graph.
    pub order: Vec<Vec<NodeId>>,
}

/// Topological order of the links with `φ > 0`, ignoring the destination's
/// outgoing links.
pub fn session_order(g: &ConnectivityGraph, phi: &[f64], destination: NodeId) -> Option<Vec<NodeId>> {
    let n = g.node_count();
    let mut indegree = vec![0usize; n];
    let positive = |l: LinkId| phi[l] > 0.0 && g.link(l).0 != destination;
    for l in 0..g.link_count() {
        if positive(l) {
            indegree[g.link(l).1] += 1;
        }
    }
    let mut stack: Vec<NodeId> = (0..n).rev().filter(|&v| indegree[v] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(v) = stack.pop() {
        order.push(v);
        for &l in g.out_links(v).iter().rev() {
            if positive(l) {
                let j = g.link(l).1;
                indegree[j] -= 1;
                if indegree[j] == 0 {
                    stack.push(j);
                }
            }
        }
    }
    (order.len() == n).then_some(order)
}

pub fn evaluate_flows(scn: &NetworkScenario, st: &ControlState) -> Result<Flows, ModelError> {
    let g = scn.graph();
    let q = scn.band_count();
    let sessions = scn.sessions();
    let mut flows = Flows {
        t: Vec::with_capacity(sessions.len()),
        f: Vec::with_capacity(sessions.len()),
        link: vec![0.0; g.link_count()],
        band: vec![0.0; g.link_count() * q],
        overflow: Vec::with_capacity(sessions.len()),
        admitted: Vec::with_capacity(sessions.len()),
        order: Vec::with_capacity(sessions.len()),
    };
    for (w, s) in sessions.iter().enumerate() {
        let phi = &st.phi[w];
        let order = session_order(g, phi, s.destination).ok_or(ModelError::CycleDetected { session: w })?;
        let overflow = s.demand * st.overflow[w];
        let admitted = s.demand - overflow;
        let mut t = vec![0.0; g.node_count()];
        let mut f = vec![0.0; g.link_count()];
        t[s.origin] = admitted;
        for &v in &order {
            if v == s.destination || t[v] == 0.0 {
                continue;
            }
            for &l in g.out_links(v) {
                if phi[l] > 0.0 {
                    f[l] = t[v] * phi[l];
                    t[g.link(l).1] += f[l];
                }
            }
        }
        for l in 0..g.link_count() {
            flows.link[l] += f[l];
        }
        flows.t.push(t);
        flows.f.push(f);
        flows.overflow.push(overflow);
        flows.admitted.push(admitted);
        flows.order.push(order);
    }
    for l in 0..g.link_count() {
        for band in scn.link_bands(l) {
            flows.band[l * q + band] = st.mu[l * q + band] * flows.link[l];
        }
    }
    Ok(flows)
}

/// Everything derived from one control state.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub physical: Physical,
    pub flows: Flows,
    /// `D(x_ij(q), F_ij(q))` at `link * Q + band`.
    pub band_cost: Vec<f64>,
    /// `D_w(F_w)`.
    pub overflow_cost: Vec<f64>,
    pub total: f64,
}

/// Returns `(band costs, overflow costs, E)`.
pub fn total_cost(scn: &NetworkScenario, phys: &Physical, flows: &Flows) -> (Vec<f64>, Vec<f64>, f64) {
    let q = scn.band_count();
    let mut band_cost = vec![0.0; scn.link_count() * q];
    let mut total = 0.0;
    for l in 0..scn.link_count() {
        for band in scn.link_bands(l) {
            let e = l * q + band;
            band_cost[e] = scn.cost().cost(phys.sinr[e], flows.band[e]);
            total += band_cost[e];
        }
    }
    let overflow_cost: Vec<f64> =
        scn.sessions().iter().zip(&flows.overflow).map(|(s, &fw)| s.utility.overflow_cost(s.demand, fw)).collect();
    total += overflow_cost.iter().sum::<f64>();
    (band_cost, overflow_cost, total)
}

pub fn evaluate(scn: &NetworkScenario, st: &ControlState) -> Result<Evaluation, ModelError> {
    let physical = evaluate_physical(scn, st);
    let flows = evaluate_flows(scn, st)?;
    let (band_cost, overflow_cost, total) = total_cost(scn, &physical, &flows);
    Ok(Evaluation { physical, flows, band_cost, overflow_cost, total })
}

/// `E`, with cyclic routing reported as `+∞`.
pub fn cost_of(scn: &NetworkScenario, st: &ControlState) -> f64 {
    evaluate(scn, st).map_or(f64::INFINITY, |e| e.total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coloring::ColorSetFamily;
    use std::f64::consts::E;

    fn k2_scenario(gain: f64, noise: f64, sessions: Vec<Session>) -> NetworkScenario {
        let g = ConnectivityGraph::complete(2);
        let fam = ColorSetFamily::new(2, vec![ColorSet::singleton(0), ColorSet::singleton(1)]).unwrap();
        let alloc = SpectrumAllocation::from_family(&g, fam).unwrap();
        NetworkScenario::new(
            g,
            alloc,
            Channel::new(2, 2, gain, noise),
            vec![1.0, 1.0],
            sessions,
            CostParams { r: 1.0, k: E },
        )
        .unwrap()
    }

    #[test]
    fn single_link_sinr() {
        let scn = k2_scenario(1.0, 1.0, vec![]);
        let st = ControlState::uniform(&scn, 0.0);
        let ph = evaluate_physical(&scn, &st);
        let e = scn.entry(0, 0);
        assert_eq!(ph.sinr[e], 1.0);
        assert_eq!(ph.interference[e], 1.0);
    }

    #[test]
    fn two_cross_interfering_links() {
        // links 0→1 and 2→3 on one band with cross gain 0.5
        let g = ConnectivityGraph::from_undirected(4, &[(0, 1), (2, 3), (1, 2)]).unwrap();
        let fam = ColorSetFamily::new(
            2,
            vec![ColorSet::singleton(0), ColorSet::singleton(1), ColorSet::singleton(0), ColorSet::singleton(1)],
        )
        .unwrap();
        let alloc = SpectrumAllocation::from_family(&g, fam).unwrap();
        let mut ch = Channel::new(2, 4, 0.0, 1.0);
        ch.set_gain(0, 0, 1, 1.0);
        ch.set_gain(0, 2, 3, 1.0);
        ch.set_gain(0, 0, 3, 0.5);
        ch.set_gain(0, 2, 1, 0.5);
        let scn = NetworkScenario::new(g.clone(), alloc, ch, vec![1.0; 4], vec![], CostParams::default()).unwrap();
        let mut st = ControlState::uniform(&scn, 0.0);
        for v in [0, 2] {
            st.rho[scn.node_entry(v, 0)] = 1.0;
        }
        // node 2 also reaches node 1 on band 0; give that link no power
        st.eta[scn.entry(g.link_id(2, 3).unwrap(), 0)] = 1.0;
        st.eta[scn.entry(g.link_id(2, 1).unwrap(), 0)] = 0.0;
        let ph = evaluate_physical(&scn, &st);
        for (a, b) in [(0, 1), (2, 3)] {
            let e = scn.entry(g.link_id(a, b).unwrap(), 0);
            assert!((ph.sinr[e] - 1.0 / 1.5).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_rho_gives_zero_sinr() {
        let scn = k2_scenario(1.0, 1.0, vec![]);
        let mut st = ControlState::uniform(&scn, 0.0);
        st.rho[scn.node_entry(0, 0)] = 0.0;
        assert_eq!(evaluate_physical(&scn, &st).sinr[scn.entry(0, 0)], 0.0);
    }

    #[test]
    fn flow_examples() {
        // s=0, a=1, d=2 on a path
        let g = ConnectivityGraph::path(3);
        let alloc = crate::dsa::run_dsa(&g, 3, 0).unwrap();
        let sess = Session { origin: 0, destination: 2, demand: 2.0, utility: Utility::Linear { weight: 1.0 } };
        let scn = NetworkScenario::new(
            g.clone(),
            alloc,
            Channel::new(3, 3, 1.0, 0.1),
            vec![1.0; 3],
            vec![sess],
            CostParams::default(),
        )
        .unwrap();
        let mut st = ControlState::uniform(&scn, 0.0);
        let fl = evaluate_flows(&scn, &st).unwrap();
        assert_eq!(fl.link[g.link_id(0, 1).unwrap()], 2.0);
        assert_eq!(fl.link[g.link_id(1, 2).unwrap()], 2.0);
        assert_eq!(fl.link[g.link_id(1, 0).unwrap()], 0.0);
        st.overflow[0] = 1.0;
        let fl = evaluate_flows(&scn, &st).unwrap();
        assert!(fl.link.iter().all(|&f| f == 0.0));
        assert_eq!(fl.overflow[0], 2.0);
        let (_, _, e) = total_cost(&scn, &evaluate_physical(&scn, &st), &fl);
        assert_eq!(e, 2.0);
    }

    #[test]
    fn two_path_split_and_cycle() {
        // square s=0, a=1, b=2, d=3
        let g = ConnectivityGraph::from_undirected(4, &[(0, 1), (0, 2), (1, 3), (2, 3)]).unwrap();
        let alloc = crate::dsa::run_dsa(&g, 4, 1).unwrap();
        let sess = Session { origin: 0, destination: 3, demand: 1.0, utility: Utility::default() };
        let scn = NetworkScenario::new(
            g.clone(),
            alloc,
            Channel::new(4, 4, 1.0, 0.1),
            vec![1.0; 4],
            vec![sess],
            CostParams::default(),
        )
        .unwrap();
        let mut st = ControlState::uniform(&scn, 0.0);
        let (sa, sb) = (g.link_id(0, 1).unwrap(), g.link_id(0, 2).unwrap());
        st.phi[0][sa] = 0.3;
        st.phi[0][sb] = 0.7;
        let fl = evaluate_flows(&scn, &st).unwrap();
        assert!((fl.f[0][sa] - 0.3).abs() < 1e-15 && (fl.f[0][sb] - 0.7).abs() < 1e-15);
        assert_eq!(fl.t[0][3], 1.0);

        let (ab, ba) = (g.link_id(1, 0).unwrap(), g.link_id(0, 1).unwrap());
        st.phi[0][g.link_id(1, 3).unwrap()] = 0.0;
        st.phi[0][ab] = 1.0;
        st.phi[0][ba] = 1.0;
        st.phi[0][sb] = 0.0;
        assert_eq!(evaluate_flows(&scn, &st), Err(ModelError::CycleDetected { session: 0 }));
    }

    #[test]
    fn link_cost_and_barrier() {
        let p = CostParams { r: 1.0, k: E };
        assert!((p.cost(E, 1.0) - 1.0).abs() < 1e-15);
        assert_eq!(p.cost(E, 2.0), f64::INFINITY);
        assert_eq!(p.cost(0.1, 0.0), 0.0);
        assert_eq!(p.cost(0.1, 0.5), f64::INFINITY);
    }

    #[test]
    fn derivative_examples() {
        let p = CostParams { r: 1.0, k: E };
        let d = cost_derivatives(E, 1.0, &p).unwrap();
        assert!((d.df - 2.0).abs() < 1e-14);
        assert!((d.dx + 1.0 / E).abs() < 1e-15);
        let d0 = cost_derivatives(E, 0.0, &p).unwrap();
        assert_eq!(d0.dx, 0.0);
        assert!((d0.df - 0.5).abs() < 1e-15);
        assert!(matches!(cost_derivatives(E, 2.0, &p), Err(ModelError::OutOfDomain { .. })));
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let p = CostParams { r: 1.3, k: 7.0 };
        let (x, f) = (2.0, 0.9);
        let h = 1e-5;
        let d = cost_derivatives(x, f, &p).unwrap();
        let c = |x, f| p.cost(x, f);
        let num_dx = (c(x + h, f) - c(x - h, f)) / (2.0 * h);
        let num_df = (c(x, f + h) - c(x, f - h)) / (2.0 * h);
        let dfd = |x, f| cost_derivatives(x, f, &p).unwrap();
        let num_dxx = (dfd(x + h, f).dx - dfd(x - h, f).dx) / (2.0 * h);
        let num_dff = (dfd(x, f + h).df - dfd(x, f - h).df) / (2.0 * h);
        let num_dxf = (dfd(x, f + h).dx - dfd(x, f - h).dx) / (2.0 * h);
        for (a, b) in [(d.dx, num_dx), (d.df, num_df), (d.dxx, num_dxx), (d.dff, num_dff), (d.dxf, num_dxf)] {
            assert!((a - b).abs() <= 1e-7 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn psd_reference_costs() {
        let grid = PsdGrid { x_min: 0.5, x_max: 5.0, f_max: 3.0, points: 20, headroom: 0.05 };
        let neg = check_m_psd(&NegativeSinrCost, &grid, 1e-10);
        assert!(!neg.passed());
        assert!((neg.min_eigenvalue + 5.0).abs() < 1e-12);
        let sq = check_m_psd(&SquaredFlowCost, &grid, 1e-10);
        assert!(sq.passed());
        assert_eq!(sq.min_eigenvalue, 0.0);
    }

    #[test]
    fn mm1_m_matrix_determinant_closed_form() {
        let p = CostParams { r: 1.0, k: 10.0 };
        for &(x, f) in &[(0.5, 0.3), (2.0, 1.0), (10.0, 4.0)] {
            let d = cost_derivatives(x, f, &p).unwrap();
            let m = m_matrix(&d, x);
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            let gap = p.capacity(x) - f;
            let expected = -p.r * p.r / gap.powi(4);
            assert!((det - expected).abs() <= 1e-9 * expected.abs());
        }
    }

    #[test]
    fn uniform_state_is_feasible() {
        let scn = k2_scenario(
            1.0,
            0.1,
            vec![Session { origin: 0, destination: 1, demand: 1.0, utility: Utility::default() }],
        );
        ControlState::uniform(&scn, 0.5).check(&scn, 1e-12).unwrap();
    }

    #[test]
    fn invalid_scenarios_list_every_violation() {
        let g = ConnectivityGraph::complete(2);
        let alloc = crate::dsa::run_dsa(&g, 2, 0).unwrap();
        let sess = Session { origin: 1, destination: 1, demand: -1.0, utility: Utility::default() };
        let err = NetworkScenario::new(
            g,
            alloc,
            Channel::new(2, 2, 1.0, 0.0),
            vec![1.0, 0.0],
            vec![sess],
            CostParams::default(),
        )
        .unwrap_err();
        match err {
            ModelError::Invalid(v) => assert!(v.len() >= 4, "{v:?}"),
            other => panic!("{other:?}"),
        }
    }
}
