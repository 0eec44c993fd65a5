//! Scaled gradient projection over the five variable blocks, optimality
//! residuals and the sweep driver.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gradients::{compute_gradients, eta_curvature, rho_partials_direct, GradientBundle, GradientOptions};
use crate::graph::{LinkId, NodeId};
use crate::model::{cost_of, evaluate, ControlState, CostDerivatives, Evaluation, ModelError, NetworkScenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Constraint {
    SumEqualsOne,
    SumAtMostOne,
    /// Every coordinate in `[0, 1]`.
    UnitBox,
}

/// Minimizer of `(z - v)ᵀ W (z - v)` over the constraint set, `W = diag(weights)`.
pub fn project_scaled(v: &[f64], weights: &[f64], constraint: Constraint) -> Vec<f64> {
    assert_eq!(v.len(), weights.len());
    debug_assert!(weights.iter().all(|&w| w > 0.0));
    match constraint {
        Constraint::UnitBox => v.iter().map(|x| x.clamp(0.0, 1.0)).collect(),
        Constraint::SumAtMostOne => {
            let z: Vec<f64> = v.iter().map(|x| x.max(0.0)).collect();
            if z.iter().sum::<f64>() <= 1.0 {
                z
            } else {
                project_simplex(v, weights)
            }
        }
        Constraint::SumEqualsOne => project_simplex(v, weights),
    }
}

/// `z_i = max(0, v_i - τ / w_i)` with `Σ z = 1`: bisection on `τ`, then an
/// exact solve on the resulting active set.
fn project_simplex(v: &[f64], w: &[f64]) -> Vec<f64> {
    let n = v.len();
    if n == 0 {
        return Vec::new();
    }
    let mass = |tau: f64| -> f64 { (0..n).map(|i| (v[i] - tau / w[i]).max(0.0)).sum() };
    let mut lo = (0..n).map(|i| w[i] * (v[i] - 1.0)).fold(f64::INFINITY, f64::min);
    let mut hi = (0..n).map(|i| w[i] * v[i]).fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mass(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut active: Vec<bool> = (0..n).map(|i| v[i] - lo / w[i] > 0.0).collect();
    let mut tau = lo;
    for _ in 0..=2 * n {
        let (sv, sw) = (0..n).filter(|&i| active[i]).fold((0.0, 0.0), |(a, b), i| (a + v[i], b + 1.0 / w[i]));
        if sw == 0.0 {
            break;
        }
        tau = (sv - 1.0) / sw;
        let next: Vec<bool> = (0..n).map(|i| v[i] - tau / w[i] > 0.0).collect();
        if next == active {
            break;
        }
        active = next;
    }
    if active.iter().filter(|&&a| a).count() == 1 {
        return active.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect();
    }
    (0..n).map(|i| if active[i] { (v[i] - tau / w[i]).clamp(0.0, 1.0) } else { 0.0 }).collect()
}

/// One group of variables updated together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BlockId {
    /// Band split of one link.
    Mu {
        link: LinkId,
    },
    /// Power split of one node over its links on one band.
    Eta {
        node: NodeId,
        band: usize,
    },
    /// Power split of one node over its bands.
    Rho {
        node: NodeId,
    },
    /// Routing split of one node for one session.
    Phi {
        node: NodeId,
        session: usize,
    },
    Overflow {
        session: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BlockKind {
    Mu,
    Eta,
    Rho,
    Phi,
    Overflow,
}

impl BlockId {
    pub fn kind(&self) -> BlockKind {
        match self {
            BlockId::Mu { .. } => BlockKind::Mu,
            BlockId::Eta { .. } => BlockKind::Eta,
            BlockId::Rho { .. } => BlockKind::Rho,
            BlockId::Phi { .. } => BlockKind::Phi,
            BlockId::Overflow { .. } => BlockKind::Overflow,
        }
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlockId::Mu { link } => write!(f, "mu[link {link}]"),
            BlockId::Eta { node, band } => write!(f, "eta[node {node}, band {band}]"),
            BlockId::Rho { node } => write!(f, "rho[node {node}]"),
            BlockId::Phi { node, session } => write!(f, "phi[node {node}, session {session}]"),
            BlockId::Overflow { session } => write!(f, "overflow[session {session}]"),
        }
    }
}

/// All non-degenerate blocks in sweep order: every μ, every η, every ρ,
/// then routing and overflow per session.
pub fn sweep_blocks(scn: &NetworkScenario) -> Vec<BlockId> {
    let g = scn.graph();
    let mut out = Vec::new();
    for link in 0..scn.link_count() {
        if scn.link_bands(link).len() > 1 {
            out.push(BlockId::Mu { link });
        }
    }
    for node in 0..scn.node_count() {
        for band in scn.used_bands(node) {
            if scn.active_out_links(node, band).len() > 1 {
                out.push(BlockId::Eta { node, band });
            }
        }
    }
    for node in 0..scn.node_count() {
        if !scn.used_bands(node).is_empty() {
            out.push(BlockId::Rho { node });
        }
    }
    for (session, s) in scn.sessions().iter().enumerate() {
        for node in 0..scn.node_count() {
            if node != s.destination && g.out_links(node).len() > 1 {
                out.push(BlockId::Phi { node, session });
            }
        }
        out.push(BlockId::Overflow { session });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScalingMode {
    DiagonalCurvature,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalingPolicy {
    pub mode: ScalingMode,
    /// Multiplies the curvature estimate.
    pub safety: f64,
    /// Lower bound on every scaling entry.
    pub floor: f64,
    /// Step multiplier per backtracking halving.
    pub shrink: f64,
    pub max_halvings: usize,
    /// Sufficient-decrease fraction.
    pub armijo: f64,
    /// A block that cannot decrease `E` is an error only above this residual.
    pub stall_tolerance: f64,
}

impl Default for ScalingPolicy {
    fn default() -> Self {
        ScalingPolicy {
            mode: ScalingMode::DiagonalCurvature,
            safety: 2.0,
            floor: 1e-9,
            shrink: 0.5,
            max_halvings: 60,
            armijo: 1e-4,
            stall_tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("the cost is infinite at the current state")]
    InfiniteCost,
    #[error("{0} is not a block of this scenario")]
    UnknownBlock(BlockId),
    #[error("no decrease on {block} after {halvings} halvings with block residual {residual:e}")]
    StalledStep { block: BlockId, residual: f64, halvings: usize },
    #[error("iteration budget exhausted with worst residual {:e}", .0.report.worst)]
    BudgetExhausted(Box<SolveOutcome>),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepReport {
    pub block: BlockId,
    pub cost_before: f64,
    pub cost_after: f64,
    /// Largest coordinate change.
    pub step_norm: f64,
    /// Largest coordinate change times its scaling entry, in gradient units.
    pub scaled_step_norm: f64,
    pub halvings: usize,
    /// Block residual before the step.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Slot {
    Rho(usize),
    Eta(usize),
    Mu(usize),
    Phi(usize, LinkId),
    Overflow(usize),
}

impl Slot {
    fn get(self, st: &ControlState) -> f64 {
        match self {
            Slot::Rho(e) => st.rho[e],
            Slot::Eta(e) => st.eta[e],
            Slot::Mu(e) => st.mu[e],
            Slot::Phi(w, l) => st.phi[w][l],
            Slot::Overflow(w) => st.overflow[w],
        }
    }

    fn set(self, st: &mut ControlState, v: f64) {
        match self {
            Slot::Rho(e) => st.rho[e] = v,
            Slot::Eta(e) => st.eta[e] = v,
            Slot::Mu(e) => st.mu[e] = v,
            Slot::Phi(w, l) => st.phi[w][l] = v,
            Slot::Overflow(w) => st.overflow[w] = v,
        }
    }
}

/// A block's local problem. The step is `W⁻¹ dir` with `dir` a positive
/// multiple of `grad` (or of the marginal that drives it at zero traffic).
struct Problem {
    slots: Vec<Slot>,
    grad: Vec<f64>,
    dir: Vec<f64>,
    curvature: Vec<f64>,
    /// Coordinates with infinite marginal cost, set to 0.
    frozen: Vec<Slot>,
    constraint: Constraint,
    residual: f64,
}

/// `Σ_b μ_b² D_FF` per link.
fn link_flow_curvature(scn: &NetworkScenario, st: &ControlState, ders: &[CostDerivatives]) -> Vec<f64> {
    let q = scn.band_count();
    (0..scn.link_count())
        .map(|l| {
            scn.link_bands(l)
                .iter()
                .map(|b| {
                    let (m, d) = (st.mu[l * q + b], ders[l * q + b].dff);
                    if m > 0.0 && d.is_finite() {
                        m * m * d
                    } else {
                        0.0
                    }
                })
                .sum()
        })
        .collect()
}

/// `∂²E/∂t_i(w)²` along the current routing of session `w`.
fn inflow_curvature(
    scn: &NetworkScenario,
    st: &ControlState,
    ev: &Evaluation,
    link_curv: &[f64],
    w: usize,
) -> Vec<f64> {
    let g = scn.graph();
    let phi = &st.phi[w];
    let dest = scn.sessions()[w].destination;
    let mut h = vec![0.0; g.node_count()];
    for &i in ev.flows.order[w].iter().rev() {
        if i == dest {
            continue;
        }
        h[i] = g
            .out_links(i)
            .iter()
            .filter(|&&l| phi[l] > 0.0)
            .map(|&l| phi[l] * phi[l] * (link_curv[l] + h[g.link(l).1]))
            .sum();
    }
    h
}

/// `max_{x_k > 0} d_k - min_k d_k` with `∞ - ∞` read as 0.
fn spread(values: impl Iterator<Item = (f64, f64)>) -> f64 {
    let (mut hi, mut lo) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut any = false;
    for (x, d) in values {
        any = true;
        lo = lo.min(d);
        if x > 0.0 {
            hi = hi.max(d);
        }
    }
    if !any || hi == f64::NEG_INFINITY || (hi == f64::INFINITY && lo == f64::INFINITY) {
        0.0
    } else {
        (hi - lo).max(0.0)
    }
}

/// `(λ_i, residual)` of the per-node power condition on `δρ`.
fn rho_condition(values: &[(f64, f64)]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let sum: f64 = values.iter().map(|v| v.0).sum();
    if sum >= 1.0 - 1e-12 {
        let lambda = values.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
        let res = values.iter().filter(|v| v.0 > 0.0).map(|v| v.1 - lambda).fold(lambda.max(0.0), f64::max);
        (lambda, res)
    } else {
        let res = values.iter().map(|&(r, d)| if r > 0.0 { d.abs() } else { (-d).max(0.0) }).fold(0.0, f64::max);
        (0.0, res)
    }
}

fn overflow_condition(phi_w: f64, d: f64) -> f64 {
    if !d.is_finite() {
        let target = if d > 0.0 { 0.0 } else { 1.0 };
        return (phi_w - target).abs();
    }
    (phi_w - (phi_w - d).clamp(0.0, 1.0)).abs()
}

fn build_problem(
    scn: &NetworkScenario,
    st: &ControlState,
    ev: &Evaluation,
    gb: &GradientBundle,
    block: BlockId,
) -> Result<Problem, OptimizerError> {
    let g = scn.graph();
    let q = scn.band_count();
    let mut p = Problem {
        slots: Vec::new(),
        grad: Vec::new(),
        dir: Vec::new(),
        curvature: Vec::new(),
        frozen: Vec::new(),
        constraint: Constraint::SumEqualsOne,
        residual: 0.0,
    };
    match block {
        BlockId::Mu { link } => {
            if link >= scn.link_count() {
                return Err(OptimizerError::UnknownBlock(block));
            }
            let f = ev.flows.link[link];
            for b in scn.link_bands(link) {
                let e = link * q + b;
                let d = gb.derivatives[e];
                if !d.df.is_finite() {
                    p.frozen.push(Slot::Mu(e));
                    continue;
                }
                p.slots.push(Slot::Mu(e));
                p.grad.push(if f > 0.0 { f * d.df } else { 0.0 });
                p.dir.push(d.df);
                p.curvature.push(if f > 0.0 { f * d.dff } else { d.dff });
            }
            p.residual = spread(p.slots.iter().zip(&p.dir).map(|(s, &d)| (s.get(st), d)));
        }
        BlockId::Eta { node, band } => {
            if node >= scn.node_count() || !scn.used_bands(node).contains(band) {
                return Err(OptimizerError::UnknownBlock(block));
            }
            let links = scn.active_out_links(node, band);
            let curv = eta_curvature(scn, ev, &gb.derivatives, node, band);
            for (k, &l) in links.iter().enumerate() {
                let e = l * q + band;
                p.slots.push(Slot::Eta(e));
                p.grad.push(gb.grad_eta[e]);
                p.dir.push(gb.grad_eta[e]);
                p.curvature.push(curv[k]);
            }
            p.residual = spread(links.iter().map(|&l| (st.eta[l * q + band], gb.delta_eta[l * q + band])));
        }
        BlockId::Rho { node } => {
            if node >= scn.node_count() || scn.used_bands(node).is_empty() {
                return Err(OptimizerError::UnknownBlock(block));
            }
            let (_, hess) = rho_partials_direct(scn, st, ev, &gb.derivatives);
            let mut values = Vec::new();
            for b in scn.used_bands(node) {
                let e = scn.node_entry(node, b);
                p.slots.push(Slot::Rho(e));
                p.grad.push(gb.delta_rho[e]);
                p.dir.push(gb.delta_rho[e]);
                p.curvature.push(hess[e]);
                values.push((st.rho[e], gb.delta_rho[e]));
            }
            p.constraint = Constraint::SumAtMostOne;
            p.residual = rho_condition(&values).1;
        }
        BlockId::Phi { node, session } => {
            if session >= scn.sessions().len()
                || node >= scn.node_count()
                || node == scn.sessions()[session].destination
            {
                return Err(OptimizerError::UnknownBlock(block));
            }
            let sm = &gb.sessions[session];
            let link_curv = link_flow_curvature(scn, st, &gb.derivatives);
            let h = inflow_curvature(scn, st, ev, &link_curv, session);
            let t = ev.flows.t[session][node];
            let scale = if t > 0.0 { t } else { 1.0 };
            for &l in g.out_links(node) {
                let slot = Slot::Phi(session, l);
                if sm.blocked[l] || !sm.delta_phi[l].is_finite() {
                    p.frozen.push(slot);
                    continue;
                }
                p.slots.push(slot);
                p.grad.push(sm.grad_phi[l]);
                p.dir.push(sm.delta_phi[l]);
                p.curvature.push(scale * (link_curv[l] + h[g.link(l).1]));
            }
            p.residual = spread(p.slots.iter().zip(&p.dir).map(|(s, &d)| (s.get(st), d)));
        }
        BlockId::Overflow { session } => {
            if session >= scn.sessions().len() {
                return Err(OptimizerError::UnknownBlock(block));
            }
            let s = scn.sessions()[session];
            let sm = &gb.sessions[session];
            let d = sm.overflow_marginal - sm.dt[s.origin];
            p.residual = overflow_condition(st.overflow[session], d);
            if d.is_finite() {
                let link_curv = link_flow_curvature(scn, st, &gb.derivatives);
                let h = inflow_curvature(scn, st, ev, &link_curv, session);
                let fw = ev.flows.overflow[session];
                p.slots.push(Slot::Overflow(session));
                p.grad.push(sm.grad_overflow);
                p.dir.push(d);
                p.curvature.push(s.demand * (s.utility.overflow_curvature(s.demand, fw) + h[s.origin]));
            }
            p.constraint = Constraint::UnitBox;
        }
    }
    Ok(p)
}

/// One scaled projected step on `block`, backtracked along the projection
/// arc until `E` decreases sufficiently.
pub fn update_block(
    scn: &NetworkScenario,
    st: &ControlState,
    block: BlockId,
    policy: &ScalingPolicy,
) -> Result<(ControlState, StepReport), OptimizerError> {
    let ev = evaluate(scn, st)?;
    if !ev.total.is_finite() {
        return Err(OptimizerError::InfiniteCost);
    }
    let gb = compute_gradients(scn, st, &ev, &GradientOptions::default())?;
    update_with(scn, st, &ev, &gb, block, policy)
}

fn update_with(
    scn: &NetworkScenario,
    st: &ControlState,
    ev: &Evaluation,
    gb: &GradientBundle,
    block: BlockId,
    policy: &ScalingPolicy,
) -> Result<(ControlState, StepReport), OptimizerError> {
    let p = build_problem(scn, st, ev, gb, block)?;
    let e0 = ev.total;
    let mut report = StepReport {
        block,
        cost_before: e0,
        cost_after: e0,
        step_norm: 0.0,
        scaled_step_norm: 0.0,
        halvings: 0,
        residual: p.residual,
    };
    let single_simplex = p.constraint == Constraint::SumEqualsOne && p.slots.len() == 1 && p.frozen.is_empty();
    if p.slots.is_empty() || single_simplex {
        return Ok((st.clone(), report));
    }
    let x: Vec<f64> = p.slots.iter().map(|s| s.get(st)).collect();
    let w: Vec<f64> = p
        .curvature
        .iter()
        .map(|&c| match policy.mode {
            ScalingMode::Identity => 1.0,
            ScalingMode::DiagonalCurvature => {
                let c = policy.safety * c.abs();
                if c.is_finite() {
                    c.max(policy.floor)
                } else {
                    f64::MAX.sqrt()
                }
            }
        })
        .collect();

    let tiny = 8.0 * f64::EPSILON * e0.abs().max(1.0);
    let mut alpha = 1.0;
    for k in 0..=policy.max_halvings {
        let v: Vec<f64> = (0..x.len()).map(|i| x[i] - alpha * p.dir[i] / w[i]).collect();
        let z = project_scaled(&v, &w, p.constraint);
        let frozen_moves = p.frozen.iter().any(|s| s.get(st) != 0.0);
        if z == x && !frozen_moves {
            return Ok((st.clone(), report));
        }
        let mut trial = st.clone();
        for (s, &zi) in p.slots.iter().zip(&z) {
            s.set(&mut trial, zi);
        }
        for s in &p.frozen {
            s.set(&mut trial, 0.0);
        }
        let pred: f64 = (0..x.len()).map(|i| p.grad[i] * (z[i] - x[i])).sum();
        let e1 = cost_of(scn, &trial);
        let armijo = e1 <= e0 + policy.armijo * pred.min(0.0);
        let negligible = pred.abs() <= tiny && e1 <= e0 + tiny;
        if e1.is_finite() && (armijo || negligible) {
            report.cost_after = e1;
            report.halvings = k;
            report.step_norm = (0..x.len()).map(|i| (z[i] - x[i]).abs()).fold(0.0, f64::max);
            report.scaled_step_norm = (0..x.len()).map(|i| (w[i] * (z[i] - x[i])).abs()).fold(0.0, f64::max);
            for s in &p.frozen {
                report.step_norm = report.step_norm.max(s.get(st));
            }
            return Ok((trial, report));
        }
        alpha *= policy.shrink;
    }
    if p.residual > policy.stall_tolerance {
        return Err(OptimizerError::StalledStep { block, residual: p.residual, halvings: policy.max_halvings });
    }
    report.halvings = policy.max_halvings;
    Ok((st.clone(), report))
}

/// Violation of each first-order optimality condition, evaluated at every
/// node and band whether or not it carries traffic or power.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimalityReport {
    /// `max over i ≠ dest of ∂E/∂t_i - min_j (min_q D_F' + ∂E/∂t_j)`.
    pub routing: f64,
    /// Natural residual of the overflow condition, in marginal-cost units.
    pub overflow: f64,
    /// Violation of the `λ_i` condition on `δρ`.
    pub power_rho: f64,
    /// Violation of the `γ_i(q)` condition on `δη`.
    pub power_eta: f64,
    /// `max over μ > 0 of D_F' - min D_F'` over links carrying flow.
    pub intra: f64,
    pub worst: f64,
    /// `λ_i` per node, `None` without power variables.
    pub lambda: Vec<Option<f64>>,
    /// `γ_i(q)` per `(node, band)`, `None` on unused bands.
    pub gamma: Vec<Option<f64>>,
}

pub fn optimality_residuals(scn: &NetworkScenario, st: &ControlState) -> Result<OptimalityReport, OptimizerError> {
    let ev = evaluate(scn, st)?;
    if !ev.total.is_finite() {
        return Err(OptimizerError::InfiniteCost);
    }
    let gb = compute_gradients(scn, st, &ev, &GradientOptions::default())?;
    Ok(residuals_from(scn, st, &ev, &gb))
}

fn residuals_from(scn: &NetworkScenario, st: &ControlState, ev: &Evaluation, gb: &GradientBundle) -> OptimalityReport {
    let flows_link = &ev.flows.link;
    let g = scn.graph();
    let q = scn.band_count();
    let n = scn.node_count();
    let mut rep = OptimalityReport {
        routing: 0.0,
        overflow: 0.0,
        power_rho: 0.0,
        power_eta: 0.0,
        intra: 0.0,
        worst: 0.0,
        lambda: vec![None; n],
        gamma: vec![None; n * q],
    };
    let min_marginal: Vec<f64> = (0..scn.link_count())
        .map(|l| scn.link_bands(l).iter().map(|b| gb.derivatives[l * q + b].df).fold(f64::INFINITY, f64::min))
        .collect();
    for (w, s) in scn.sessions().iter().enumerate() {
        let sm = &gb.sessions[w];
        for i in 0..n {
            if i == s.destination {
                continue;
            }
            let best =
                g.out_links(i).iter().map(|&l| min_marginal[l] + sm.dt[g.link(l).1]).fold(f64::INFINITY, f64::min);
            let r = if sm.dt[i] == f64::INFINITY && best == f64::INFINITY { 0.0 } else { (sm.dt[i] - best).max(0.0) };
            rep.routing = rep.routing.max(r);
        }
        let d = sm.overflow_marginal - sm.dt[s.origin];
        rep.overflow = rep.overflow.max(overflow_condition(st.overflow[w], d));
    }
    for i in 0..n {
        let used = scn.used_bands(i);
        if used.is_empty() {
            continue;
        }
        let values: Vec<(f64, f64)> = used.iter().map(|b| (st.rho[i * q + b], gb.delta_rho[i * q + b])).collect();
        let (lambda, r) = rho_condition(&values);
        rep.lambda[i] = Some(lambda);
        rep.power_rho = rep.power_rho.max(r);
        for b in used {
            let links = scn.active_out_links(i, b);
            let gamma = links.iter().map(|&l| gb.delta_eta[l * q + b]).fold(f64::INFINITY, f64::min);
            rep.gamma[i * q + b] = Some(gamma);
            let r = spread(links.iter().map(|&l| (st.eta[l * q + b], gb.delta_eta[l * q + b])));
            rep.power_eta = rep.power_eta.max(r);
        }
    }
    for l in (0..scn.link_count()).filter(|&l| flows_link[l] > 0.0) {
        let r = spread(scn.link_bands(l).iter().map(|b| (st.mu[l * q + b], gb.derivatives[l * q + b].df)));
        rep.intra = rep.intra.max(r);
    }
    rep.worst = [rep.routing, rep.overflow, rep.power_rho, rep.power_eta, rep.intra].into_iter().fold(0.0, |a, b| {
        if b.is_nan() {
            f64::INFINITY
        } else {
            a.max(b)
        }
    });
    rep
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepOrder {
    RoundRobin,
    /// A fresh permutation of the blocks every sweep.
    Seeded(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub tolerance: f64,
    pub max_iters: usize,
    pub order: SweepOrder,
    pub policy: ScalingPolicy,
    /// Re-check state constraints and monotone descent after every step.
    pub check_invariants: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tolerance: 1e-4,
            max_iters: 2000,
            order: SweepOrder::RoundRobin,
            policy: ScalingPolicy::default(),
            check_invariants: false,
        }
    }
}

/// One row per sweep; row 0 is the initial state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub cost: f64,
    pub worst_residual: f64,
    pub step_mu: f64,
    pub step_eta: f64,
    pub step_rho: f64,
    pub step_phi: f64,
    pub step_overflow: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    pub state: ControlState,
    pub report: OptimalityReport,
    pub trace: Vec<TraceRecord>,
    pub converged: bool,
}

impl SolveOutcome {
    pub fn cost(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |r| r.cost)
    }
}

/// Sweeps every block until the worst residual is at most the tolerance.
pub fn solve(
    scn: &NetworkScenario,
    initial: &ControlState,
    config: &SolverConfig,
) -> Result<SolveOutcome, OptimizerError> {
    initial.check(scn, 1e-9)?;
    let mut st = initial.clone();
    let ev = evaluate(scn, &st)?;
    if !ev.total.is_finite() {
        return Err(OptimizerError::InfiniteCost);
    }
    let mut policy = config.policy;
    policy.stall_tolerance = config.tolerance;
    let mut report = residuals_from(scn, &st, &ev, &compute_gradients(scn, &st, &ev, &GradientOptions::default())?);
    let mut trace = vec![TraceRecord {
        iteration: 0,
        cost: ev.total,
        worst_residual: report.worst,
        step_mu: 0.0,
        step_eta: 0.0,
        step_rho: 0.0,
        step_phi: 0.0,
        step_overflow: 0.0,
    }];
    let mut rng = match config.order {
        SweepOrder::Seeded(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        SweepOrder::RoundRobin => None,
    };
    let base = sweep_blocks(scn);
    let mut iteration = 0;
    while !(report.worst <= config.tolerance) {
        if iteration == config.max_iters {
            return Err(OptimizerError::BudgetExhausted(Box::new(SolveOutcome {
                state: st,
                report,
                trace,
                converged: false,
            })));
        }
        iteration += 1;
        let mut blocks = base.clone();
        if let Some(rng) = rng.as_mut() {
            blocks.shuffle(rng);
        }
        let mut rec = TraceRecord { iteration, cost: 0.0, worst_residual: 0.0, ..trace[0] };
        for block in blocks {
            let (next, step) = update_block(scn, &st, block, &policy)?;
            if config.check_invariants {
                next.check(scn, 1e-9).map_err(|e| OptimizerError::Invariant(format!("after {block}: {e}")))?;
                if step.cost_after > step.cost_before + 1e-12 {
                    return Err(OptimizerError::Invariant(format!(
                        "{block} raised E from {} to {}",
                        step.cost_before, step.cost_after
                    )));
                }
            }
            let slot = match block.kind() {
                BlockKind::Mu => &mut rec.step_mu,
                BlockKind::Eta => &mut rec.step_eta,
                BlockKind::Rho => &mut rec.step_rho,
                BlockKind::Phi => &mut rec.step_phi,
                BlockKind::Overflow => &mut rec.step_overflow,
            };
            *slot = slot.max(step.step_norm);
            st = next;
        }
        let ev = evaluate(scn, &st)?;
        report = residuals_from(scn, &st, &ev, &compute_gradients(scn, &st, &ev, &GradientOptions::default())?);
        rec.cost = ev.total;
        rec.worst_residual = report.worst;
        trace.push(rec);
    }
    Ok(SolveOutcome { state: st, report, trace, converged: true })
}
