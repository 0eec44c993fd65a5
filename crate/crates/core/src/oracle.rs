//! Independent checks: finite-difference gradients and a reference solver
//! for tiny instances.

use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::gradients::{compute_gradients, GradientBundle, GradientOptions};
use crate::graph::{LinkId, NodeId};
use crate::model::{cost_of, evaluate, ControlState, ModelError, NetworkScenario};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("{0} is too close to a constraint boundary or the capacity barrier")]
    BoundaryTooClose(Coordinate),
    #[error("instance too large for the reference solver: {0}")]
    TooLarge(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Block {
    Eta,
    Rho,
    Phi,
    Overflow,
    Mu,
}

impl Block {
    pub const ALL: [Block; 5] = [Block::Eta, Block::Rho, Block::Phi, Block::Overflow, Block::Mu];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Coordinate {
    Eta { link: LinkId, band: usize },
    Rho { node: NodeId, band: usize },
    Phi { session: usize, link: LinkId },
    Overflow { session: usize },
    Mu { link: LinkId, band: usize },
}

impl Coordinate {
    pub fn block(&self) -> Block {
        match self {
            Coordinate::Eta { .. } => Block::Eta,
            Coordinate::Rho { .. } => Block::Rho,
            Coordinate::Phi { .. } => Block::Phi,
            Coordinate::Overflow { .. } => Block::Overflow,
            Coordinate::Mu { .. } => Block::Mu,
        }
    }

    fn slot<'a>(&self, scn: &NetworkScenario, st: &'a mut ControlState) -> &'a mut f64 {
        match *self {
            Coordinate::Eta { link, band } => &mut st.eta[scn.entry(link, band)],
            Coordinate::Rho { node, band } => &mut st.rho[scn.node_entry(node, band)],
            Coordinate::Phi { session, link } => &mut st.phi[session][link],
            Coordinate::Overflow { session } => &mut st.overflow[session],
            Coordinate::Mu { link, band } => &mut st.mu[scn.entry(link, band)],
        }
    }

    fn analytic(&self, scn: &NetworkScenario, gb: &GradientBundle) -> f64 {
        match *self {
            Coordinate::Eta { link, band } => gb.grad_eta[scn.entry(link, band)],
            Coordinate::Rho { node, band } => gb.delta_rho[scn.node_entry(node, band)],
            Coordinate::Phi { session, link } => gb.sessions[session].grad_phi[link],
            Coordinate::Overflow { session } => gb.sessions[session].grad_overflow,
            Coordinate::Mu { link, band } => gb.grad_mu[scn.entry(link, band)],
        }
    }
}

impl fmt::Display for Coordinate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coordinate::Eta { link, band } => write!(f, "eta[link {link}, band {band}]"),
            Coordinate::Rho { node, band } => write!(f, "rho[node {node}, band {band}]"),
            Coordinate::Phi { session, link } => write!(f, "phi[session {session}, link {link}]"),
            Coordinate::Overflow { session } => write!(f, "overflow[session {session}]"),
            Coordinate::Mu { link, band } => write!(f, "mu[link {link}, band {band}]"),
        }
    }
}

/// Every variable of the state that is free to move in a derivative check:
/// power and flow fractions on active entries, routing fractions that are
/// currently positive, and the overflow fractions.
pub fn free_coordinates(scn: &NetworkScenario, st: &ControlState) -> Vec<Coordinate> {
    let mut out = Vec::new();
    for l in 0..scn.link_count() {
        for band in scn.link_bands(l) {
            out.push(Coordinate::Eta { link: l, band });
            out.push(Coordinate::Mu { link: l, band });
        }
    }
    for node in 0..scn.node_count() {
        for band in scn.used_bands(node) {
            out.push(Coordinate::Rho { node, band });
        }
    }
    for (session, phi) in st.phi.iter().enumerate() {
        out.push(Coordinate::Overflow { session });
        for (link, &p) in phi.iter().enumerate() {
            if p > 0.0 {
                out.push(Coordinate::Phi { session, link });
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckOptions {
    /// Perturbation, in variable units.
    pub step: f64,
    /// Relative-error threshold for flagging a coordinate.
    pub tolerance: f64,
    /// Denominators of relative errors are at least this times `max(1, |E|)`.
    pub floor: f64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions { step: 1e-4, tolerance: 1e-5, floor: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Discrepancy {
    pub coordinate: Coordinate,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    /// `(block, max relative error, coordinates checked)`.
    pub blocks: Vec<(Block, f64, usize)>,
    pub failing: Vec<Discrepancy>,
    pub step: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.failing.is_empty()
    }

    pub fn max_relative_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.1).fold(0.0, f64::max)
    }
}

/// Compares the analytic gradients of the state against a fourth-order
/// central difference of the total cost.
pub fn finite_diff_check(
    scn: &NetworkScenario,
    st: &ControlState,
    blocks: &[Block],
    opts: &CheckOptions,
) -> Result<CheckReport, OracleError> {
    let ev = evaluate(scn, st)?;
    let gb = compute_gradients(scn, st, &ev, &GradientOptions::default())?;
    finite_diff_check_against(scn, st, &gb, blocks, opts)
}

/// As [`finite_diff_check`], with the analytic side supplied by the caller.
pub fn finite_diff_check_against(
    scn: &NetworkScenario,
    st: &ControlState,
    analytic: &GradientBundle,
    blocks: &[Block],
    opts: &CheckOptions,
) -> Result<CheckReport, OracleError> {
    let e0 = cost_of(scn, st);
    if !e0.is_finite() {
        return Err(OracleError::Model(ModelError::OutOfDomain { x: f64::NAN, f: f64::NAN }));
    }
    let floor = opts.floor * e0.abs().max(1.0);
    let h = opts.step;
    let mut report =
        CheckReport { blocks: blocks.iter().map(|&b| (b, 0.0, 0)).collect(), failing: Vec::new(), step: h };
    let mut work = st.clone();
    for c in free_coordinates(scn, st) {
        let Some(slot_index) = blocks.iter().position(|&b| b == c.block()) else { continue };
        let v = *c.slot(scn, &mut work);
        if v == 0.0 {
            continue;
        }
        let upper_ok = !matches!(c, Coordinate::Overflow { .. }) || v <= 1.0 - 2.0 * h;
        if v < 2.0 * h || !upper_ok {
            return Err(OracleError::BoundaryTooClose(c));
        }
        let mut eval_at = |delta: f64| {
            *c.slot(scn, &mut work) = v + delta;
            let e = cost_of(scn, &work);
            *c.slot(scn, &mut work) = v;
            e
        };
        let (m2, m1, p1, p2) = (eval_at(-2.0 * h), eval_at(-h), eval_at(h), eval_at(2.0 * h));
        if ![m2, m1, p1, p2].iter().all(|e| e.is_finite()) {
            return Err(OracleError::BoundaryTooClose(c));
        }
        let numeric = (m2 - 8.0 * m1 + 8.0 * p1 - p2) / (12.0 * h);
        let a = c.analytic(scn, analytic);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        let entry = &mut report.blocks[slot_index];
        entry.1 = entry.1.max(rel);
        entry.2 += 1;
        if !(rel <= opts.tolerance) {
            report.failing.push(Discrepancy { coordinate: c, analytic: a, numeric, relative_error: rel });
        }
    }
    Ok(report)
}

/// Limits of [`reference_solve_small`].
pub const REFERENCE_MAX_NODES: usize = 4;
pub const REFERENCE_MAX_SESSIONS: usize = 2;
pub const REFERENCE_MAX_BANDS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSolution {
    /// Lowest cost over all restarts.
    pub best: f64,
    /// Final cost of each restart.
    pub restarts: Vec<f64>,
    /// The best point mapped to node-based variables; `None` when its
    /// routing contains a cycle.
    pub state: Option<ControlState>,
}

/// Minimizes the total cost of a tiny instance by projected gradient descent
/// on a separate parameterization (link powers, path flows, band splits)
/// with finite-difference gradients, keeping the best of several restarts.
pub fn reference_solve_small(
    scn: &NetworkScenario,
    restarts: usize,
    budget: usize,
) -> Result<ReferenceSolution, OracleError> {
    if scn.node_count() > REFERENCE_MAX_NODES
        || scn.sessions().len() > REFERENCE_MAX_SESSIONS
        || scn.band_count() > REFERENCE_MAX_BANDS
    {
        return Err(OracleError::TooLarge(format!(
            "{} nodes, {} sessions, {} bands (limits {REFERENCE_MAX_NODES}, {REFERENCE_MAX_SESSIONS}, {REFERENCE_MAX_BANDS})",
            scn.node_count(),
            scn.sessions().len(),
            scn.band_count()
        )));
    }
    let layout = Layout::new(scn);
    let mut finals = Vec::with_capacity(restarts.max(1));
    for r in 0..restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(r as u64);
        let start = layout.start(scn, &mut rng, r == 0);
        finals.push(layout.descend(scn, start, budget));
    }
    let (best, point) =
        finals.iter().fold((f64::INFINITY, None), |acc, (e, x)| if *e < acc.0 { (*e, Some(x)) } else { acc });
    let state = point.and_then(|x| layout.to_state(scn, x));
    Ok(ReferenceSolution { best, restarts: finals.iter().map(|f| f.0).collect(), state })
}

/// Variable layout of the reference parameterization. Every block is a
/// probability simplex.
struct Layout {
    /// Per node: `(link, band)` entries; the block has one extra slack entry.
    power: Vec<Vec<(LinkId, usize)>>,
    /// Per session: simple paths as link lists; the block has one extra
    /// overflow entry.
    paths: Vec<Vec<Vec<LinkId>>>,
    /// Per link: active bands.
    bands: Vec<Vec<usize>>,
}

type Point = Vec<Vec<f64>>;

impl Layout {
    fn new(scn: &NetworkScenario) -> Self {
        let g = scn.graph();
        let power = (0..g.node_count())
            .map(|i| g.out_links(i).iter().flat_map(|&l| scn.link_bands(l).iter().map(move |b| (l, b))).collect())
            .collect();
        let paths = scn.sessions().iter().map(|s| simple_paths(scn, s.origin, s.destination)).collect();
        let bands = (0..g.link_count()).map(|l| scn.link_bands(l).iter().collect()).collect();
        Layout { power, paths, bands }
    }

    fn start(&self, scn: &NetworkScenario, rng: &mut ChaCha8Rng, uniform: bool) -> Point {
        let mut x: Point = Vec::new();
        for entries in &self.power {
            let mut v: Vec<f64> = if uniform {
                vec![1.0; entries.len()]
            } else {
                (0..entries.len()).map(|_| rng.gen_range(0.05..1.0)).collect()
            };
            v.push(if uniform { 0.0 } else { rng.gen_range(0.0..0.3) });
            normalize(&mut v);
            x.push(v);
        }
        for paths in &self.paths {
            let mut v: Vec<f64> =
                (0..paths.len()).map(|_| if uniform { 1.0 } else { rng.gen_range(0.0..1.0) }).collect();
            normalize(&mut v);
            let admitted = if uniform { 0.1 } else { rng.gen_range(0.0..0.5) };
            v.iter_mut().for_each(|p| *p *= admitted);
            v.push(1.0 - admitted);
            x.push(v);
        }
        for bands in &self.bands {
            let mut v: Vec<f64> =
                (0..bands.len()).map(|_| if uniform { 1.0 } else { rng.gen_range(0.05..1.0) }).collect();
            normalize(&mut v);
            x.push(v);
        }
        // shift admitted traffic to overflow until the cost is finite
        for _ in 0..60 {
            if self.cost(scn, &x).is_finite() {
                break;
            }
            for w in 0..self.paths.len() {
                let block = &mut x[self.power.len() + w];
                let last = block.len() - 1;
                for p in &mut block[..last] {
                    *p *= 0.5;
                }
                block[last] = 1.0 - block[..last].iter().sum::<f64>();
            }
        }
        x
    }

    fn cost(&self, scn: &NetworkScenario, x: &Point) -> f64 {
        let g = scn.graph();
        let q = scn.band_count();
        let n = g.node_count();
        let ch = scn.channel();
        let mut link_power = vec![0.0; g.link_count() * q];
        let mut node_power = vec![0.0; n * q];
        for (i, entries) in self.power.iter().enumerate() {
            for (k, &(l, b)) in entries.iter().enumerate() {
                let p = scn.budgets()[i] * x[i][k];
                link_power[l * q + b] = p;
                node_power[i * q + b] += p;
            }
        }
        let mut link_flow = vec![0.0; g.link_count()];
        let mut total = 0.0;
        for (w, paths) in self.paths.iter().enumerate() {
            let s = scn.sessions()[w];
            let block = &x[n + w];
            for (k, path) in paths.iter().enumerate() {
                for &l in path {
                    link_flow[l] += s.demand * block[k];
                }
            }
            let overflow = s.demand * block[paths.len()];
            total += s.utility.value(s.demand) - s.utility.value(s.demand - overflow);
        }
        let (r, kk) = (scn.cost().r, scn.cost().k);
        for (l, &(i, j)) in g.links().iter().enumerate() {
            let split = &x[n + self.paths.len() + l];
            for (k, &b) in self.bands[l].iter().enumerate() {
                let f = split[k] * link_flow[l];
                if f <= 0.0 {
                    continue;
                }
                let p = link_power[l * q + b];
                let mut denom = ch.noise(b, j) + ch.gain(b, i, j) * (node_power[i * q + b] - p);
                for m in 0..n {
                    if m != i && m != j {
                        denom += ch.gain(b, m, j) * node_power[m * q + b];
                    }
                }
                let sinr = ch.gain(b, i, j) * p / denom;
                let capacity = if sinr > 0.0 { r * (kk * sinr).ln() } else { f64::NEG_INFINITY };
                if capacity <= f {
                    return f64::INFINITY;
                }
                total += f / (capacity - f);
            }
        }
        total
    }

    fn gradient(&self, scn: &NetworkScenario, x: &Point, e0: f64) -> Point {
        const H: f64 = 1e-7;
        let mut work = x.clone();
        let mut grad: Point = x.iter().map(|b| vec![0.0; b.len()]).collect();
        for bi in 0..x.len() {
            if x[bi].len() < 2 {
                continue;
            }
            for k in 0..x[bi].len() {
                let v = x[bi][k];
                work[bi][k] = v + H;
                let up = self.cost(scn, &work);
                let down = if v >= H {
                    work[bi][k] = v - H;
                    self.cost(scn, &work)
                } else {
                    f64::NAN
                };
                work[bi][k] = v;
                grad[bi][k] = match (up.is_finite(), down.is_finite()) {
                    (true, true) => (up - down) / (2.0 * H),
                    (true, false) => (up - e0) / H,
                    (false, true) => (e0 - down) / H,
                    // cannot increase at all
                    (false, false) => f64::INFINITY,
                };
            }
        }
        grad
    }

    fn descend(&self, scn: &NetworkScenario, mut x: Point, budget: usize) -> (f64, Point) {
        let mut e = self.cost(scn, &x);
        if !e.is_finite() {
            return (e, x);
        }
        let mut step = 1e-3;
        let mut quiet = 0;
        for _ in 0..budget {
            let grad = self.gradient(scn, &x, e);
            let mut accepted = false;
            for _ in 0..60 {
                let trial: Point = x
                    .iter()
                    .zip(&grad)
                    .map(|(b, g)| {
                        if b.len() < 2 {
                            return b.clone();
                        }
                        project_free(b, g, step)
                    })
                    .collect();
                let decrease: f64 = trial
                    .iter()
                    .zip(&x)
                    .zip(&grad)
                    .flat_map(|((t, b), g)| {
                        t.iter().zip(b).zip(g).filter(|(_, gi)| gi.is_finite()).map(|((ti, bi), gi)| gi * (ti - bi))
                    })
                    .sum();
                let e1 = self.cost(scn, &trial);
                if e1.is_finite() && e1 <= e + 1e-4 * decrease.min(0.0) {
                    quiet = if e - e1 <= 1e-14 * e.abs().max(1e-300) { quiet + 1 } else { 0 };
                    x = trial;
                    e = e1;
                    accepted = true;
                    step *= 2.0;
                    break;
                }
                step *= 0.5;
            }
            if !accepted || quiet >= 20 {
                break;
            }
        }
        (e, x)
    }

    /// Power and band fractions are read off directly; per-session
    /// fractions come from the path flows, and nodes without traffic of a
    /// session route to a neighbor that already reaches the destination.
    fn to_state(&self, scn: &NetworkScenario, x: &Point) -> Option<ControlState> {
        let g = scn.graph();
        let n = g.node_count();
        let q = scn.band_count();
        let mut st = ControlState::uniform(scn, 0.0);
        for (i, entries) in self.power.iter().enumerate() {
            let mut per_band = vec![0.0; q];
            for (k, &(_, b)) in entries.iter().enumerate() {
                per_band[b] += x[i][k];
            }
            for b in scn.used_bands(i) {
                st.rho[scn.node_entry(i, b)] = per_band[b];
            }
            for (k, &(l, b)) in entries.iter().enumerate() {
                if per_band[b] > 0.0 {
                    st.eta[scn.entry(l, b)] = x[i][k] / per_band[b];
                }
            }
        }
        for (l, bands) in self.bands.iter().enumerate() {
            for (k, &b) in bands.iter().enumerate() {
                st.mu[scn.entry(l, b)] = x[n + self.paths.len() + l][k];
            }
        }
        for (w, paths) in self.paths.iter().enumerate() {
            let dest = scn.sessions()[w].destination;
            let block = &x[n + w];
            let mut link_flow = vec![0.0; g.link_count()];
            for (k, path) in paths.iter().enumerate() {
                for &l in path {
                    link_flow[l] += block[k];
                }
            }
            let mut phi = vec![0.0; g.link_count()];
            let mut resolved = vec![false; n];
            resolved[dest] = true;
            for v in 0..n {
                let out: f64 = g.out_links(v).iter().map(|&l| link_flow[l]).sum();
                if v != dest && out > 0.0 {
                    for &l in g.out_links(v) {
                        phi[l] = link_flow[l] / out;
                    }
                    resolved[v] = true;
                }
            }
            crate::model::session_order(g, &phi, dest)?;
            let dist = g.hop_distances(dest);
            let mut rest: Vec<NodeId> = (0..n).filter(|&v| !resolved[v]).collect();
            rest.sort_by_key(|&v| (dist[v], v));
            for v in rest {
                let &l = g.out_links(v).iter().find(|&&l| resolved[g.link(l).1])?;
                phi[l] = 1.0;
                resolved[v] = true;
            }
            st.phi[w] = phi;
            st.overflow[w] = block[paths.len()];
        }
        st.check(scn, 1e-9).ok()?;
        Some(st)
    }
}

fn normalize(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
}

/// Gradient step on one simplex block; coordinates with infinite gradient
/// keep their value and the rest is projected onto the remaining mass.
fn project_free(x: &[f64], g: &[f64], step: f64) -> Vec<f64> {
    let free: Vec<usize> = (0..x.len()).filter(|&i| g[i].is_finite()).collect();
    let mass = 1.0 - (0..x.len()).filter(|&i| !g[i].is_finite()).map(|i| x[i]).sum::<f64>();
    let mut out = x.to_vec();
    if free.is_empty() || mass <= 0.0 {
        return out;
    }
    let v: Vec<f64> = free.iter().map(|&i| (x[i] - step * g[i]) / mass).collect();
    for (&i, z) in free.iter().zip(euclidean_simplex(&v)) {
        out[i] = mass * z;
    }
    out
}

/// Euclidean projection onto the probability simplex by sorting.
fn euclidean_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        acc += uj;
        let t = (acc - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

fn simple_paths(scn: &NetworkScenario, from: NodeId, to: NodeId) -> Vec<Vec<LinkId>> {
    fn walk(
        g: &crate::graph::ConnectivityGraph,
        at: NodeId,
        to: NodeId,
        seen: &mut Vec<bool>,
        path: &mut Vec<LinkId>,
        out: &mut Vec<Vec<LinkId>>,
    ) {
        if at == to {
            out.push(path.clone());
            return;
        }
        for &l in g.out_links(at) {
            let next = g.link(l).1;
            if !seen[next] {
                seen[next] = true;
                path.push(l);
                walk(g, next, to, seen, path, out);
                path.pop();
                seen[next] = false;
            }
        }
    }
    let g = scn.graph();
    let mut seen = vec![false; g.node_count()];
    seen[from] = true;
    let mut out = Vec::new();
    walk(g, from, to, &mut seen, &mut Vec::new(), &mut out);
    out
}
