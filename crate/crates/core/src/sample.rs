//! Seeded random scenarios and control states for tests, examples and
//! oracle runs.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::coloring::{check_oc_feasibility, family_from_node_labels, q_min, ColorSetFamily};
use crate::dsa::SpectrumAllocation;
use crate::graph::{exact_coloring, ConnectivityGraph, NodeId};
use crate::model::{cost_of, evaluate, Channel, ControlState, CostParams, NetworkScenario, Session, Utility};

/// Size limits for [`random_scenario`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioShape {
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub max_bands: usize,
    pub min_sessions: usize,
    pub max_sessions: usize,
    /// Probability of each non-tree edge.
    pub extra_edges: f64,
}

impl ScenarioShape {
    /// 4-8 nodes, at most 3 bands, 1-3 sessions.
    pub const MEDIUM: ScenarioShape =
        ScenarioShape { min_nodes: 4, max_nodes: 8, max_bands: 3, min_sessions: 1, max_sessions: 3, extra_edges: 0.25 };
    /// At most 4 nodes, 3 bands and 2 sessions.
    pub const SMALL: ScenarioShape =
        ScenarioShape { min_nodes: 2, max_nodes: 4, max_bands: 3, min_sessions: 1, max_sessions: 2, extra_edges: 0.3 };
}

/// A random connected graph whose chromatic number fits in
/// `shape.max_bands`, a minimum-band allocation randomly enlarged so some
/// links get several bands, per-band gains that are strong between
/// neighbors and weak otherwise, and random sessions.
pub fn random_scenario<R: Rng + ?Sized>(rng: &mut R, shape: &ScenarioShape) -> NetworkScenario {
    loop {
        let n = rng.gen_range(shape.min_nodes..=shape.max_nodes);
        let g = ConnectivityGraph::random_connected(n, shape.extra_edges, rng);
        let labels = exact_coloring(&g);
        let chi = labels.iter().max().map_or(1, |&m| m + 1);
        if q_min(chi) > shape.max_bands {
            continue;
        }
        let q = rng.gen_range(q_min(chi).max(2)..=shape.max_bands.max(2));
        let Ok(family) = family_from_node_labels(&g, &labels, q) else { continue };
        let family = enlarge_family(&g, family, rng);
        let alloc = SpectrumAllocation::from_family(&g, family).expect("feasible family");

        let mut ch = Channel::new(q, n, 0.0, 0.0);
        for band in 0..q {
            for m in 0..n {
                for j in 0..n {
                    if m != j {
                        let g_mj =
                            if g.link_id(m, j).is_some() { rng.gen_range(0.5..1.5) } else { rng.gen_range(0.01..0.1) };
                        ch.set_gain(band, m, j, g_mj);
                    }
                }
                ch.set_noise(band, m, rng.gen_range(0.01..0.05));
            }
        }
        let s = rng.gen_range(shape.min_sessions..=shape.max_sessions);
        let sessions = (0..s)
            .map(|_| {
                let origin = rng.gen_range(0..n);
                let mut destination = rng.gen_range(0..n - 1);
                if destination >= origin {
                    destination += 1;
                }
                Session {
                    origin,
                    destination,
                    demand: rng.gen_range(1.0..5.0),
                    utility: Utility::Log { weight: rng.gen_range(1.0..3.0) },
                }
            })
            .collect();
        return NetworkScenario::new(g, alloc, ch, vec![1.0; n], sessions, CostParams { r: 1.0, k: 100.0 })
            .expect("generated scenario is valid");
    }
}

/// Adds random bands to random nodes while the family stays feasible.
pub fn enlarge_family<R: Rng + ?Sized>(g: &ConnectivityGraph, family: ColorSetFamily, rng: &mut R) -> ColorSetFamily {
    let q = family.band_count();
    let mut sets = family.sets().to_vec();
    for _ in 0..g.node_count() {
        let v = rng.gen_range(0..g.node_count());
        let b = rng.gen_range(0..q);
        let mut trial = sets.clone();
        trial[v] = trial[v].with(b);
        let candidate = ColorSetFamily::new(q, trial.clone()).expect("bands in range");
        if check_oc_feasibility(g, &candidate).is_feasible() {
            sets = trial;
        }
    }
    ColorSetFamily::new(q, sets).expect("bands in range")
}

/// Random point of a simplex with every coordinate at least `floor / len`.
fn simplex_point<R: Rng + ?Sized>(rng: &mut R, len: usize, floor: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..len).map(|_| rng.gen_range(0.0..1.0f64)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|r| (1.0 - floor) * r / s + floor / len as f64).collect()
}

/// Node ranks that make "route only to lower-ranked neighbors" loop-free
/// and give every non-destination node at least one allowed neighbor.
fn routing_ranks<R: Rng + ?Sized>(g: &ConnectivityGraph, destination: NodeId, rng: &mut R) -> Vec<(usize, f64)> {
    let dist = g.hop_distances(destination);
    (0..g.node_count()).map(|v| (dist[v], rng.gen_range(0.0..1.0))).collect()
}

/// A random state with every free variable strictly inside its range and
/// at least `margin` from zero, with finite cost and link flows at most
/// `1 - headroom` of capacity. Returns `None` after `attempts` failures.
pub fn random_interior_state<R: Rng + ?Sized>(
    rng: &mut R,
    scn: &NetworkScenario,
    margin: f64,
    headroom: f64,
    attempts: usize,
) -> Option<ControlState> {
    for _ in 0..attempts {
        let st = random_state_with(rng, scn, 0.2 + 10.0 * margin, 0.9);
        if has_headroom(scn, &st, headroom) && min_free_value(scn, &st) >= margin {
            return Some(st);
        }
    }
    None
}

/// A random feasible state with finite cost, used as an optimizer start.
pub fn random_state<R: Rng + ?Sized>(rng: &mut R, scn: &NetworkScenario) -> ControlState {
    loop {
        let st = random_state_with(rng, scn, 0.0, 1.0);
        if cost_of(scn, &st).is_finite() {
            return st;
        }
    }
}

fn random_state_with<R: Rng + ?Sized>(
    rng: &mut R,
    scn: &NetworkScenario,
    floor: f64,
    max_rho_sum: f64,
) -> ControlState {
    let g = scn.graph();
    let mut st = ControlState::uniform(scn, 0.0);
    for v in 0..g.node_count() {
        let used: Vec<usize> = scn.used_bands(v).iter().collect();
        let total = rng.gen_range(0.3..max_rho_sum.max(0.31));
        let split = simplex_point(rng, used.len(), floor);
        for (k, &band) in used.iter().enumerate() {
            st.rho[scn.node_entry(v, band)] = total * split[k];
            let links = scn.active_out_links(v, band);
            let eta = simplex_point(rng, links.len(), floor);
            for (&l, &e) in links.iter().zip(&eta) {
                st.eta[scn.entry(l, band)] = e;
            }
        }
    }
    for l in 0..g.link_count() {
        let bands: Vec<usize> = scn.link_bands(l).iter().collect();
        let mu = simplex_point(rng, bands.len(), floor);
        for (&b, &m) in bands.iter().zip(&mu) {
            st.mu[scn.entry(l, b)] = m;
        }
    }
    for (w, s) in scn.sessions().iter().enumerate() {
        let rank = routing_ranks(g, s.destination, rng);
        let mut phi = vec![0.0; g.link_count()];
        for v in 0..g.node_count() {
            if v == s.destination {
                continue;
            }
            let mut allowed: Vec<usize> =
                g.out_links(v).iter().copied().filter(|&l| rank[g.link(l).1] < rank[v]).collect();
            if floor == 0.0 {
                allowed.shuffle(rng);
                let keep = rng.gen_range(1..=allowed.len());
                allowed.truncate(keep);
            }
            let split = simplex_point(rng, allowed.len(), floor);
            for (&l, &p) in allowed.iter().zip(&split) {
                phi[l] = p;
            }
        }
        st.phi[w] = phi;
        st.overflow[w] = if floor > 0.0 { rng.gen_range(0.3..0.7) } else { rng.gen_range(0.0..1.0) };
    }
    // back off admitted traffic until the cost is finite
    for _ in 0..8 {
        if cost_of(scn, &st).is_finite() {
            return st;
        }
        for o in &mut st.overflow {
            *o = 1.0 - 0.5 * (1.0 - *o);
        }
    }
    if !cost_of(scn, &st).is_finite() {
        st.overflow.iter_mut().for_each(|o| *o = 1.0);
    }
    st
}

fn has_headroom(scn: &NetworkScenario, st: &ControlState, headroom: f64) -> bool {
    let Ok(ev) = evaluate(scn, st) else { return false };
    if !ev.total.is_finite() {
        return false;
    }
    let q = scn.band_count();
    (0..scn.link_count()).all(|l| {
        scn.link_bands(l).iter().all(|b| {
            let e = l * q + b;
            let f = ev.flows.band[e];
            f == 0.0 || f <= (1.0 - headroom) * scn.cost().capacity(ev.physical.sinr[e])
        })
    })
}

/// Smallest strictly positive free variable: power and flow splits with
/// more than one option, the overflow fraction and its complement.
fn min_free_value(scn: &NetworkScenario, st: &ControlState) -> f64 {
    let mut m = f64::INFINITY;
    for v in 0..scn.node_count() {
        for b in scn.used_bands(v) {
            m = m.min(st.rho[scn.node_entry(v, b)]);
            for l in scn.active_out_links(v, b) {
                m = m.min(st.eta[scn.entry(l, b)]);
            }
        }
    }
    for l in 0..scn.link_count() {
        for b in scn.link_bands(l) {
            m = m.min(st.mu[scn.entry(l, b)]);
        }
    }
    for (w, phi) in st.phi.iter().enumerate() {
        m = m.min(st.overflow[w]).min(1.0 - st.overflow[w]);
        for &p in phi {
            if p > 0.0 {
                m = m.min(p);
            }
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn generated_scenarios_and_states_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut multi_band = 0;
        for _ in 0..10 {
            let scn = random_scenario(&mut rng, &ScenarioShape::MEDIUM);
            assert!(scn.band_count() <= 3);
            multi_band += (0..scn.link_count()).filter(|&l| scn.link_bands(l).len() > 1).count();
            let st = random_interior_state(&mut rng, &scn, 1e-3, 0.05, 200).expect("interior state");
            st.check(&scn, 1e-12).unwrap();
            let st = random_state(&mut rng, &scn);
            st.check(&scn, 1e-12).unwrap();
        }
        assert!(multi_band > 0);
    }
}
