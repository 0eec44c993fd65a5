//! First-order information: power-control indicators, the message
//! protocol, routing marginal costs and intra-node gradients.

use crate::graph::{LinkId, NodeId};
use crate::model::{cost_derivatives, ControlState, CostDerivatives, Evaluation, ModelError, NetworkScenario};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientOptions {
    /// Terms `G^q_in MSG^q_n` below this value are dropped from `δρ`.
    pub gain_cutoff: f64,
}

impl Default for GradientOptions {
    fn default() -> Self {
        GradientOptions { gain_cutoff: 0.0 }
    }
}

/// Link cost partials at every active `(link, band)`, extended to the
/// zero-flow boundary: with `F = 0` and `C(x) ≤ 0` the flow marginal is
/// `+∞` and every other partial is 0. Entries outside the finite-cost
/// domain are NaN.
pub fn link_derivatives(scn: &NetworkScenario, ev: &Evaluation) -> Vec<CostDerivatives> {
    let q = scn.band_count();
    let mut out = vec![CostDerivatives::default(); scn.link_count() * q];
    for l in 0..scn.link_count() {
        for band in scn.link_bands(l) {
            let e = l * q + band;
            out[e] = extended_derivatives(scn, ev.physical.sinr[e], ev.flows.band[e]);
        }
    }
    out
}

fn extended_derivatives(scn: &NetworkScenario, x: f64, f: f64) -> CostDerivatives {
    if f <= 0.0 && !(scn.cost().capacity(x) > 0.0) {
        return CostDerivatives { df: f64::INFINITY, ..Default::default() };
    }
    cost_derivatives(x, f, scn.cost()).unwrap_or(CostDerivatives {
        dx: f64::NAN,
        df: f64::NAN,
        dxx: f64::NAN,
        dff: f64::NAN,
        dxf: f64::NAN,
    })
}

/// Marginal routing costs for one session.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionMarginals {
    /// `∂E/∂t_i(w)` per node.
    pub dt: Vec<f64>,
    /// `δφ_ij(w)` per link, including links with `φ = 0`.
    pub delta_phi: Vec<f64>,
    /// `∂E/∂φ_ij(w) = t_i(w) δφ_ij(w)` per link.
    pub grad_phi: Vec<f64>,
    /// `D_w'`.
    pub overflow_marginal: f64,
    /// `∂E/∂φ_w = r̄_w (D_w' - ∂E/∂t_{O(w)})`.
    pub grad_overflow: f64,
    /// Links `(i, j)` where `j` reaches `i` through positive-`φ` links.
    pub blocked: Vec<bool>,
}

/// Everything needed to take a step or to test optimality.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    /// Link cost partials per `(link, band)`.
    pub derivatives: Vec<CostDerivatives>,
    /// `MSG^q_n` per `(node, band)`.
    pub msg: Vec<f64>,
    /// `δη_ij(q)` per `(link, band)`.
    pub delta_eta: Vec<f64>,
    /// `∂E/∂η_ij(q)` per `(link, band)`.
    pub grad_eta: Vec<f64>,
    /// `δρ_i(q) = ∂E/∂ρ_i(q)` per `(node, band)`.
    pub delta_rho: Vec<f64>,
    /// `∂E/∂μ_ij(q) = F_ij D_F'` per `(link, band)`.
    pub grad_mu: Vec<f64>,
    pub sessions: Vec<SessionMarginals>,
    band_count: usize,
}

impl GradientBundle {
    /// `D_F'` at `(link, band)`.
    pub fn flow_marginal(&self, link: LinkId, band: usize) -> f64 {
        self.derivatives[link * self.band_count + band].df
    }

    /// `(link, δη, ∂E/∂η)` over the active outgoing links of `node` on `band`.
    pub fn delta_eta(&self, scn: &NetworkScenario, node: NodeId, band: usize) -> Vec<(LinkId, f64, f64)> {
        scn.active_out_links(node, band)
            .into_iter()
            .map(|l| {
                let e = scn.entry(l, band);
                (l, self.delta_eta[e], self.grad_eta[e])
            })
            .collect()
    }

    /// `(band, δρ)` over the bands used by `node`.
    pub fn delta_rho(&self, scn: &NetworkScenario, node: NodeId) -> Vec<(usize, f64)> {
        scn.used_bands(node).iter().map(|b| (b, self.delta_rho[scn.node_entry(node, b)])).collect()
    }

    /// `(band, ∂E/∂μ)` over the active bands of `link`.
    pub fn delta_mu(&self, scn: &NetworkScenario, link: LinkId) -> Vec<(usize, f64)> {
        scn.link_bands(link).iter().map(|b| (b, self.grad_mu[scn.entry(link, b)])).collect()
    }
}

pub fn compute_gradients(
    scn: &NetworkScenario,
    st: &ControlState,
    ev: &Evaluation,
    opts: &GradientOptions,
) -> Result<GradientBundle, ModelError> {
    let q = scn.band_count();
    let derivatives = link_derivatives(scn, ev);
    let msg = power_messages(scn, ev, &derivatives);
    let (delta_eta, grad_eta) = eta_indicators(scn, ev, &derivatives);
    let delta_rho = delta_rho(scn, st, &msg, &delta_eta, opts);
    let mut grad_mu = vec![0.0; scn.link_count() * q];
    for l in 0..scn.link_count() {
        if ev.flows.link[l] > 0.0 {
            for band in scn.link_bands(l) {
                let e = l * q + band;
                grad_mu[e] = ev.flows.link[l] * derivatives[e].df;
            }
        }
    }
    let sessions = (0..scn.sessions().len())
        .map(|w| routing_marginals(scn, st, ev, &derivatives, w))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(GradientBundle { derivatives, msg, delta_eta, grad_eta, delta_rho, grad_mu, sessions, band_count: q })
}

/// `MSG^q_n = Σ_m -D_x' G^q_mn P_mn(q) / IN_mn(q)²` over active incoming links.
pub fn power_messages(scn: &NetworkScenario, ev: &Evaluation, ders: &[CostDerivatives]) -> Vec<f64> {
    let g = scn.graph();
    let q = scn.band_count();
    let mut msg = vec![0.0; g.node_count() * q];
    for (l, &(m, n)) in g.links().iter().enumerate() {
        for band in scn.link_bands(l) {
            let e = l * q + band;
            let p = ev.physical.link_power[e];
            if p > 0.0 && ders[e].dx != 0.0 {
                let inn = ev.physical.interference[e];
                msg[n * q + band] += -ders[e].dx * scn.channel().gain(band, m, n) * p / (inn * inn);
            }
        }
    }
    msg
}

/// The same messages assembled from the receiver-side form
/// `-D_x' x² / (G P)`.
pub fn power_messages_local(scn: &NetworkScenario, ev: &Evaluation, ders: &[CostDerivatives]) -> Vec<f64> {
    let g = scn.graph();
    let q = scn.band_count();
    let mut msg = vec![0.0; g.node_count() * q];
    for (l, &(m, n)) in g.links().iter().enumerate() {
        for band in scn.link_bands(l) {
            let e = l * q + band;
            let p = ev.physical.link_power[e];
            let gain = scn.channel().gain(band, m, n);
            if p > 0.0 && gain > 0.0 && ders[e].dx != 0.0 {
                let x = ev.physical.sinr[e];
                msg[n * q + band] += -ders[e].dx * x * x / (gain * p);
            }
        }
    }
    msg
}

/// Returns `(δη, ∂E/∂η)` per `(link, band)`.
fn eta_indicators(scn: &NetworkScenario, ev: &Evaluation, ders: &[CostDerivatives]) -> (Vec<f64>, Vec<f64>) {
    let g = scn.graph();
    let q = scn.band_count();
    let ch = scn.channel();
    let mut delta = vec![0.0; g.link_count() * q];
    let mut grad = vec![0.0; g.link_count() * q];
    for (l, &(i, j)) in g.links().iter().enumerate() {
        for band in scn.link_bands(l) {
            let e = l * q + band;
            if ders[e].dx != 0.0 {
                let inn = ev.physical.interference[e];
                delta[e] = ders[e].dx * ch.gain(band, i, j) * (1.0 + ev.physical.sinr[e]) / inn;
            }
        }
    }
    for i in 0..g.node_count() {
        for band in scn.used_bands(i) {
            let links = scn.active_out_links(i, band);
            let common: f64 = links
                .iter()
                .map(|&k| {
                    let e = k * q + band;
                    if ders[e].dx == 0.0 {
                        0.0
                    } else {
                        let n = g.link(k).1;
                        ders[e].dx * (-ch.gain(band, i, n) * ev.physical.sinr[e] / ev.physical.interference[e])
                    }
                })
                .sum();
            let pi = ev.physical.node_power[i * q + band];
            for &k in &links {
                let e = k * q + band;
                grad[e] = pi * (common + delta[e]);
            }
        }
    }
    (delta, grad)
}

/// `δρ_i(q) = P̄_i (Σ_n G^q_in MSG^q_n + Σ_j δη_ij(q) η_ij(q))`.
fn delta_rho(
    scn: &NetworkScenario,
    st: &ControlState,
    msg: &[f64],
    delta_eta: &[f64],
    opts: &GradientOptions,
) -> Vec<f64> {
    let g = scn.graph();
    let q = scn.band_count();
    let ch = scn.channel();
    let mut out = vec![0.0; g.node_count() * q];
    for i in 0..g.node_count() {
        for band in scn.used_bands(i) {
            let mut s = 0.0;
            for n in 0..g.node_count() {
                let m = msg[n * q + band];
                if n != i && m != 0.0 {
                    let term = ch.gain(band, i, n) * m;
                    if term >= opts.gain_cutoff {
                        s += term;
                    }
                }
            }
            for &l in g.out_links(i) {
                let e = l * q + band;
                s += delta_eta[e] * st.eta[e];
            }
            out[i * q + band] = scn.budgets()[i] * s;
        }
    }
    out
}

/// `∂E/∂ρ_i(q)` and `∂²E/∂ρ_i(q)²` per `(node, band)` by differentiating
/// every SINR on the band directly, without the message decomposition.
pub fn rho_partials_direct(
    scn: &NetworkScenario,
    st: &ControlState,
    ev: &Evaluation,
    ders: &[CostDerivatives],
) -> (Vec<f64>, Vec<f64>) {
    let g = scn.graph();
    let q = scn.band_count();
    let ch = scn.channel();
    let mut grad = vec![0.0; g.node_count() * q];
    let mut hess = vec![0.0; g.node_count() * q];
    for i in 0..g.node_count() {
        let budget = scn.budgets()[i];
        for band in scn.used_bands(i) {
            let sum_eta: f64 = scn.active_out_links(i, band).iter().map(|&k| st.eta[k * q + band]).sum();
            let (mut d1, mut d2) = (0.0, 0.0);
            for (l, &(m, n)) in g.links().iter().enumerate() {
                if !scn.link_bands(l).contains(band) {
                    continue;
                }
                let e = l * q + band;
                let d = ders[e];
                if d.dx == 0.0 && d.dxx == 0.0 {
                    continue;
                }
                let x = ev.physical.sinr[e];
                let inn = ev.physical.interference[e];
                let (x1, x2) = if m == i {
                    let a = ch.gain(band, i, n) * budget;
                    let eta = st.eta[e];
                    let rest = inn - a * st.rho[i * q + band] * (sum_eta - eta);
                    let x1 = a * eta * rest / (inn * inn);
                    (x1, -2.0 * x1 * a * (sum_eta - eta) / inn)
                } else if n != i {
                    let gp = ch.gain(band, i, n) * budget;
                    (-x * gp / inn, 2.0 * x * gp * gp / (inn * inn))
                } else {
                    (0.0, 0.0)
                };
                d1 += d.dx * x1;
                d2 += d.dxx * x1 * x1 + d.dx * x2;
            }
            grad[i * q + band] = d1;
            hess[i * q + band] = d2;
        }
    }
    (grad, hess)
}

/// Diagonal of `∂²E/∂η_ij(q)²` over the active outgoing links of `node` on
/// `band`, in the order of [`NetworkScenario::active_out_links`].
pub fn eta_curvature(
    scn: &NetworkScenario,
    ev: &Evaluation,
    ders: &[CostDerivatives],
    node: NodeId,
    band: usize,
) -> Vec<f64> {
    let q = scn.band_count();
    let ch = scn.channel();
    let links = scn.active_out_links(node, band);
    let pi = ev.physical.node_power[node * q + band];
    links
        .iter()
        .map(|&j_link| {
            let mut h = 0.0;
            for &k in &links {
                let e = k * q + band;
                let d = ders[e];
                if d.dx == 0.0 && d.dxx == 0.0 {
                    continue;
                }
                let n = scn.graph().link(k).1;
                let a = ch.gain(band, node, n) * pi;
                let inn = ev.physical.interference[e];
                let (x1, x2) = if k == j_link {
                    (a / inn, 0.0)
                } else {
                    let x = ev.physical.sinr[e];
                    (-x * a / inn, 2.0 * x * a * a / (inn * inn))
                };
                h += d.dxx * x1 * x1 + d.dx * x2;
            }
            h
        })
        .collect()
}

/// Marginal routing costs of session `w` by an upstream sweep from the
/// destination, plus the blocked links.
pub fn routing_marginals(
    scn: &NetworkScenario,
    st: &ControlState,
    ev: &Evaluation,
    ders: &[CostDerivatives],
    w: usize,
) -> Result<SessionMarginals, ModelError> {
    let g = scn.graph();
    let q = scn.band_count();
    let sess = scn.sessions()[w];
    let phi = &st.phi[w];
    let order =
        crate::model::session_order(g, phi, sess.destination).ok_or(ModelError::CycleDetected { session: w })?;

    let link_marginal: Vec<f64> = (0..g.link_count())
        .map(|l| {
            scn.link_bands(l)
                .iter()
                .filter(|&b| st.mu[l * q + b] > 0.0)
                .map(|b| st.mu[l * q + b] * ders[l * q + b].df)
                .sum()
        })
        .collect();

    let mut dt = vec![0.0; g.node_count()];
    for &i in order.iter().rev() {
        if i == sess.destination {
            continue;
        }
        dt[i] = g
            .out_links(i)
            .iter()
            .filter(|&&l| phi[l] > 0.0)
            .map(|&l| phi[l] * (link_marginal[l] + dt[g.link(l).1]))
            .sum();
    }
    let mut delta_phi = vec![0.0; g.link_count()];
    let mut grad_phi = vec![0.0; g.link_count()];
    for (l, &(i, j)) in g.links().iter().enumerate() {
        if i == sess.destination {
            continue;
        }
        delta_phi[l] = link_marginal[l] + dt[j];
        let t = ev.flows.t[w][i];
        grad_phi[l] = if t > 0.0 { t * delta_phi[l] } else { 0.0 };
    }
    let overflow = ev.flows.overflow[w];
    let overflow_marginal = sess.utility.overflow_marginal(sess.demand, overflow);
    let grad_overflow = sess.demand * (overflow_marginal - dt[sess.origin]);
    Ok(SessionMarginals {
        dt,
        delta_phi,
        grad_phi,
        overflow_marginal,
        grad_overflow,
        blocked: blocked_links(scn, phi, sess.destination),
    })
}

/// `(i, j)` is blocked when `j` already reaches `i` through links with
/// positive routing fraction.
pub fn blocked_links(scn: &NetworkScenario, phi: &[f64], destination: NodeId) -> Vec<bool> {
    let g = scn.graph();
    let n = g.node_count();
    // reaches[i][v]: v reaches i
    let mut reaches = vec![vec![false; n]; n];
    for (i, row) in reaches.iter_mut().enumerate() {
        let mut stack = vec![i];
        row[i] = true;
        while let Some(v) = stack.pop() {
            for &l in g.in_links(v) {
                let u = g.link(l).0;
                if phi[l] > 0.0 && u != destination && !row[u] {
                    row[u] = true;
                    stack.push(u);
                }
            }
        }
    }
    g.links().iter().map(|&(i, j)| i != destination && reaches[i][j]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsa::run_dsa;
    use crate::graph::ConnectivityGraph;
    use crate::model::{evaluate, Channel, CostParams, Session, Utility};

    fn path_scenario(demand: f64) -> NetworkScenario {
        let g = ConnectivityGraph::path(3);
        let alloc = run_dsa(&g, 3, 0).unwrap();
        let sess = Session { origin: 0, destination: 2, demand, utility: Utility::Log { weight: 3.0 } };
        NetworkScenario::new(g, alloc, Channel::new(3, 3, 1.0, 0.05), vec![1.0; 3], vec![sess], CostParams::default())
            .unwrap()
    }

    #[test]
    fn zero_flow_gives_zero_power_gradients() {
        let scn = path_scenario(1.0);
        let st = ControlState::uniform(&scn, 1.0);
        let ev = evaluate(&scn, &st).unwrap();
        let gb = compute_gradients(&scn, &st, &ev, &GradientOptions::default()).unwrap();
        assert!(gb.msg.iter().all(|&m| m == 0.0));
        assert!(gb.delta_eta.iter().all(|&d| d == 0.0));
        assert!(gb.delta_rho.iter().all(|&d| d == 0.0));
        assert!(gb.grad_mu.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn destination_and_single_path_marginals() {
        let scn = path_scenario(0.5);
        let st = ControlState::uniform(&scn, 0.0);
        let ev = evaluate(&scn, &st).unwrap();
        let gb = compute_gradients(&scn, &st, &ev, &GradientOptions::default()).unwrap();
        let g = scn.graph();
        let sm = &gb.sessions[0];
        assert_eq!(sm.dt[2], 0.0);
        let (sa, ad) = (g.link_id(0, 1).unwrap(), g.link_id(1, 2).unwrap());
        let band_sa = scn.link_bands(sa).iter().next().unwrap();
        let band_ad = scn.link_bands(ad).iter().next().unwrap();
        let expected = gb.flow_marginal(sa, band_sa) + gb.flow_marginal(ad, band_ad);
        assert!((sm.dt[0] - expected).abs() < 1e-14);
        // reverse links are blocked: 1 reaches 0? no, 0 reaches 1
        assert!(sm.blocked[g.link_id(1, 0).unwrap()]);
        assert!(!sm.blocked[sa]);
    }

    #[test]
    fn message_forms_agree() {
        let scn = path_scenario(0.8);
        let st = ControlState::uniform(&scn, 0.1);
        let ev = evaluate(&scn, &st).unwrap();
        let ders = link_derivatives(&scn, &ev);
        let a = power_messages(&scn, &ev, &ders);
        let b = power_messages_local(&scn, &ev, &ders);
        assert!(a.iter().any(|&m| m > 0.0));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-300), "{x} vs {y}");
        }
    }

    #[test]
    fn message_and_direct_rho_routes_agree() {
        let scn = path_scenario(0.8);
        let st = ControlState::uniform(&scn, 0.1);
        let ev = evaluate(&scn, &st).unwrap();
        let gb = compute_gradients(&scn, &st, &ev, &GradientOptions::default()).unwrap();
        let (direct, _) = rho_partials_direct(&scn, &st, &ev, &gb.derivatives);
        for (a, b) in gb.delta_rho.iter().zip(&direct) {
            assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
        }
    }

    #[test]
    fn cyclic_routing_is_rejected() {
        let scn = path_scenario(0.8);
        let mut st = ControlState::uniform(&scn, 0.1);
        let ev = evaluate(&scn, &st).unwrap();
        let ders = link_derivatives(&scn, &ev);
        let g = scn.graph();
        st.phi[0][g.link_id(1, 0).unwrap()] = 0.5;
        st.phi[0][g.link_id(1, 2).unwrap()] = 0.5;
        let err = routing_marginals(&scn, &st, &ev, &ders, 0).unwrap_err();
        assert_eq!(err, ModelError::CycleDetected { session: 0 });
    }
}
