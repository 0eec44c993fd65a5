//! Distributed sub-band allocation.
//!
//! The protocol runs in three steps. A designated first node picks any
//! `⌊Q/2⌋` bands as its outgoing set. Every other node, once at least one
//! neighbor has been processed, picks `⌊Q/2⌋` bands distinct from each
//! processed neighbor's set, preferring bands that occur least often among
//! those neighbors. Finally each link `(i,j)` is given `OC_i \ OC_j`.
//!
//! Asynchrony is simulated by a seeded sequential processing order; two
//! nodes processed "at the same time" in the real protocol are never
//! adjacent, so any such schedule is equivalent to some sequential one.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coloring::{assign_link_colors, q_min, ColorSetFamily, ColoringError, LinkColoring};
use crate::colorset::{ColorSet, MAX_BANDS};
use crate::graph::{ConnectivityGraph, LinkId, NodeId};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DsaError {
    #[error("{q} bands are fewer than the {required} needed for maximum degree {max_degree}")]
    InsufficientBands { q: usize, required: usize, max_degree: usize },
    #[error("band count {0} exceeds the supported maximum")]
    TooManyBands(usize),
    #[error("no candidate outgoing set for node {node}")]
    NoCandidate { node: i64 },
    #[error("processing order is invalid at position {position}")]
    InvalidOrder { position: usize },
    #[error("joining node has {neighbors} neighbors, more than the maximum degree {max_degree}")]
    DegreeBudgetExceeded { neighbors: usize, max_degree: usize },
    #[error("node {0} is not in the graph")]
    UnknownNode(i64),
    #[error("node {0} already exists")]
    DuplicateNode(i64),
    #[error("removing the node leaves {components} components")]
    Disconnected { graph: Box<ConnectivityGraph>, allocation: Box<SpectrumAllocation>, components: usize },
    #[error(transparent)]
    Coloring(#[from] ColoringError),
}

/// A spectrum allocation: per-node outgoing sets and the per-link active
/// bands they induce.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpectrumAllocation {
    family: ColorSetFamily,
    coloring: LinkColoring,
}

impl SpectrumAllocation {
    /// Induces the link coloring of a feasible family.
    pub fn from_family(g: &ConnectivityGraph, family: ColorSetFamily) -> Result<Self, ColoringError> {
        let coloring = assign_link_colors(g, &family)?;
        Ok(SpectrumAllocation { family, coloring })
    }

    /// Pairs a family with an arbitrary link coloring. Nothing beyond the
    /// band counts is checked; see [`check_spectrum_feasibility`].
    pub fn from_parts(family: ColorSetFamily, coloring: LinkColoring) -> Self {
        assert_eq!(family.band_count(), coloring.band_count(), "band counts differ");
        SpectrumAllocation { family, coloring }
    }

    pub fn band_count(&self) -> usize {
        self.family.band_count()
    }

    pub fn family(&self) -> &ColorSetFamily {
        &self.family
    }

    pub fn coloring(&self) -> &LinkColoring {
        &self.coloring
    }

    /// `OC_i`.
    pub fn node_bands(&self, node: NodeId) -> ColorSet {
        self.family.set(node)
    }

    /// `Q_ij`.
    pub fn link_bands(&self, link: LinkId) -> ColorSet {
        self.coloring.set(link)
    }

    /// `L_q`.
    pub fn active_links(&self, band: usize) -> Vec<LinkId> {
        self.coloring.active_links(band)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProcessingOrder {
    /// Always process the lowest-index eligible node.
    LowestIndex,
    /// Pick uniformly among eligible nodes.
    #[default]
    Seeded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    /// Equal occurrence counts resolve to the lower band index.
    #[default]
    LowestBand,
    /// Equal occurrence counts resolve by a seeded band permutation.
    Seeded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DsaConfig {
    /// Node designated by the initialization phase; seeded when `None`.
    pub first_node: Option<NodeId>,
    pub order: ProcessingOrder,
    pub tie_break: TieBreak,
}

/// Runs the protocol with a seeded processing order.
pub fn run_dsa(g: &ConnectivityGraph, q: usize, seed: u64) -> Result<SpectrumAllocation, DsaError> {
    run_dsa_with(g, q, seed, &DsaConfig::default()).map(|(alloc, _)| alloc)
}

/// Runs the protocol and also returns the processing order used.
pub fn run_dsa_with(
    g: &ConnectivityGraph,
    q: usize,
    seed: u64,
    config: &DsaConfig,
) -> Result<(SpectrumAllocation, Vec<NodeId>), DsaError> {
    check_band_budget(g, q)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = g.node_count();
    let first = match config.first_node {
        Some(v) if v < n => v,
        Some(v) => return Err(DsaError::UnknownNode(v as i64)),
        None => match config.order {
            ProcessingOrder::LowestIndex => 0,
            ProcessingOrder::Seeded => rng.gen_range(0..n),
        },
    };
    let mut processed = vec![false; n];
    let mut order = Vec::with_capacity(n);
    processed[first] = true;
    order.push(first);
    for _ in 1..n {
        let mut frontier: Vec<NodeId> =
            (0..n).filter(|&v| !processed[v] && g.neighbors(v).iter().any(|&u| processed[u])).collect();
        let next = match config.order {
            ProcessingOrder::LowestIndex => frontier[0],
            ProcessingOrder::Seeded => {
                frontier.shuffle(&mut rng);
                frontier[0]
            }
        };
        processed[next] = true;
        order.push(next);
    }
    let alloc = run_dsa_in_order(g, q, &order, config.tie_break, &mut rng)?;
    Ok((alloc, order))
}

/// Runs Steps 1-3 in an explicit processing order. Every node after the
/// first must have a neighbor earlier in `order`.
pub fn run_dsa_in_order<R: Rng + ?Sized>(
    g: &ConnectivityGraph,
    q: usize,
    order: &[NodeId],
    tie_break: TieBreak,
    rng: &mut R,
) -> Result<SpectrumAllocation, DsaError> {
    check_band_budget(g, q)?;
    let n = g.node_count();
    let mut seen = vec![false; n];
    if order.len() != n {
        return Err(DsaError::InvalidOrder { position: order.len().min(n) });
    }
    let k = q / 2;
    let mut sets = vec![ColorSet::EMPTY; n];
    for (position, &v) in order.iter().enumerate() {
        if v >= n || seen[v] {
            return Err(DsaError::InvalidOrder { position });
        }
        let processed_neighbors: Vec<ColorSet> =
            g.neighbors(v).iter().filter(|&&u| seen[u]).map(|&u| sets[u]).collect();
        if position > 0 && processed_neighbors.is_empty() {
            return Err(DsaError::InvalidOrder { position });
        }
        let rank = tie_ranks(q, tie_break, rng);
        sets[v] = if position == 0 {
            ColorSet::full(k)
        } else {
            choose_outgoing_set(q, &processed_neighbors, &rank).ok_or(DsaError::NoCandidate { node: g.label(v) })?
        };
        seen[v] = true;
    }
    let family = ColorSetFamily::new(q, sets)?;
    Ok(SpectrumAllocation::from_family(g, family)?)
}

fn check_band_budget(g: &ConnectivityGraph, q: usize) -> Result<(), DsaError> {
    if q > MAX_BANDS {
        return Err(DsaError::TooManyBands(q));
    }
    let required = q_min(g.max_degree() + 1);
    if q < required {
        return Err(DsaError::InsufficientBands { q, required, max_degree: g.max_degree() });
    }
    Ok(())
}

fn tie_ranks<R: Rng + ?Sized>(q: usize, tie_break: TieBreak, rng: &mut R) -> Vec<usize> {
    let mut rank: Vec<usize> = (0..q).collect();
    if tie_break == TieBreak::Seeded {
        rank.shuffle(rng);
    }
    rank
}

/// Step 2 for one node: a `⌊q/2⌋`-subset distinct from every set in
/// `neighbor_sets`, taking bands in increasing order of occurrence.
///
/// Bands are sorted by (occurrence count, `tie_rank`). The first candidate
/// is the prefix of that order. When it collides with a neighbor's set, the
/// highest-occurrence chosen band is swapped for the lowest-occurrence
/// unchosen one, continuing through combinations of sorted positions in
/// lexicographic order. Returns `None` only when no candidate exists.
pub fn choose_outgoing_set(q: usize, neighbor_sets: &[ColorSet], tie_rank: &[usize]) -> Option<ColorSet> {
    let k = q / 2;
    let counts: Vec<usize> = (0..q).map(|b| neighbor_sets.iter().filter(|s| s.contains(b)).count()).collect();
    let mut bands: Vec<usize> = (0..q).collect();
    bands.sort_by_key(|&b| (counts[b], tie_rank[b]));

    let mut distinct = neighbor_sets.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let mut positions: Vec<usize> = (0..k).collect();
    loop {
        let candidate: ColorSet = positions.iter().map(|&p| bands[p]).collect();
        if !distinct.contains(&candidate) {
            return Some(candidate);
        }
        // next combination of k positions out of q
        let mut i = k;
        loop {
            if i == 0 {
                return None;
            }
            i -= 1;
            if positions[i] < q - k + i {
                break;
            }
        }
        positions[i] += 1;
        for j in i + 1..k {
            positions[j] = positions[j - 1] + 1;
        }
    }
}

/// Coverage and duplexing violations of an allocation.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SpectrumReport {
    /// Links with no active band.
    pub uncovered: Vec<(NodeId, NodeId)>,
    /// `(node, band)` where the node both sends and receives.
    pub duplexing: Vec<(NodeId, usize)>,
}

impl SpectrumReport {
    pub fn is_feasible(&self) -> bool {
        self.uncovered.is_empty() && self.duplexing.is_empty()
    }
}

pub fn check_spectrum_feasibility(g: &ConnectivityGraph, alloc: &SpectrumAllocation) -> SpectrumReport {
    let coloring = alloc.coloring();
    assert_eq!(coloring.sets().len(), g.link_count(), "allocation must cover every link");
    SpectrumReport {
        uncovered: coloring.coverage_violations().into_iter().map(|l| g.link(l)).collect(),
        duplexing: coloring.duplexing_violations(g),
    }
}

/// A node leaving or joining, in external node labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TopologyChange {
    Leave { node: i64 },
    Join { node: i64, neighbors: Vec<i64> },
}

/// Applies a leave or join to a running allocation without touching the
/// allocation of any link not incident to the changed node.
///
/// A joining node runs Step 2 against its (all processed) neighbors, then
/// Step 3 on its incident links; it may connect to at most `Δ(G)` nodes of
/// the old graph.
pub fn apply_topology_change(
    alloc: &SpectrumAllocation,
    g: &ConnectivityGraph,
    change: &TopologyChange,
    seed: u64,
) -> Result<(ConnectivityGraph, SpectrumAllocation), DsaError> {
    let q = alloc.band_count();
    match change {
        TopologyChange::Leave { node } => {
            let v = g.node_of_label(*node).ok_or(DsaError::UnknownNode(*node))?;
            let graph = g.without_node(v);
            let sets: Vec<ColorSet> = (0..g.node_count()).filter(|&u| u != v).map(|u| alloc.node_bands(u)).collect();
            let remap = |u: NodeId| if u >= v { u + 1 } else { u };
            let link_sets: Vec<ColorSet> = graph
                .links()
                .iter()
                .map(|&(a, b)| alloc.link_bands(g.link_id(remap(a), remap(b)).expect("old link")))
                .collect();
            let allocation =
                SpectrumAllocation::from_parts(ColorSetFamily::new(q, sets)?, LinkColoring::new(q, link_sets)?);
            let components = graph.component_count();
            if components > 1 {
                return Err(DsaError::Disconnected {
                    graph: Box::new(graph),
                    allocation: Box::new(allocation),
                    components,
                });
            }
            Ok((graph, allocation))
        }
        TopologyChange::Join { node, neighbors } => {
            if g.node_of_label(*node).is_some() {
                return Err(DsaError::DuplicateNode(*node));
            }
            let mut dense = Vec::with_capacity(neighbors.len());
            for &l in neighbors {
                let u = g.node_of_label(l).ok_or(DsaError::UnknownNode(l))?;
                if !dense.contains(&u) {
                    dense.push(u);
                }
            }
            if dense.is_empty() {
                return Err(DsaError::InvalidOrder { position: 0 });
            }
            if dense.len() > g.max_degree() {
                return Err(DsaError::DegreeBudgetExceeded { neighbors: dense.len(), max_degree: g.max_degree() });
            }
            check_band_budget(g, q)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rank = tie_ranks(q, TieBreak::LowestBand, &mut rng);
            let neighbor_sets: Vec<ColorSet> = dense.iter().map(|&u| alloc.node_bands(u)).collect();
            let own = choose_outgoing_set(q, &neighbor_sets, &rank).ok_or(DsaError::NoCandidate { node: *node })?;

            let graph = g.with_node(*node, &dense);
            let new = g.node_count();
            let mut sets = alloc.family().sets().to_vec();
            sets.push(own);
            let link_sets: Vec<ColorSet> = graph
                .links()
                .iter()
                .map(|&(a, b)| {
                    if a != new && b != new {
                        alloc.link_bands(g.link_id(a, b).expect("old link"))
                    } else {
                        sets[a].difference(sets[b])
                    }
                })
                .collect();
            let allocation =
                SpectrumAllocation::from_parts(ColorSetFamily::new(q, sets)?, LinkColoring::new(q, link_sets)?);
            Ok((graph, allocation))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coloring::check_oc_feasibility;

    fn cs(b: &[usize]) -> ColorSet {
        ColorSet::from_bands(b.iter().copied())
    }

    fn deterministic() -> DsaConfig {
        DsaConfig { first_node: Some(0), order: ProcessingOrder::LowestIndex, tie_break: TieBreak::LowestBand }
    }

    #[test]
    fn path_hand_trace() {
        let g = ConnectivityGraph::path(3);
        let (alloc, order) = run_dsa_with(&g, 3, 0, &deterministic()).unwrap();
        assert_eq!(order, vec![0, 1, 2]);
        assert_eq!(alloc.family().sets(), &[cs(&[0]), cs(&[1]), cs(&[0])]);
        assert_eq!(alloc.link_bands(g.link_id(0, 1).unwrap()), cs(&[0]));
        assert_eq!(alloc.link_bands(g.link_id(1, 0).unwrap()), cs(&[1]));
        assert_eq!(alloc.link_bands(g.link_id(1, 2).unwrap()), cs(&[1]));
        assert_eq!(alloc.link_bands(g.link_id(2, 1).unwrap()), cs(&[0]));
    }

    #[test]
    fn k4_gets_four_distinct_pairs() {
        let g = ConnectivityGraph::complete(4);
        let alloc = run_dsa(&g, 4, 11).unwrap();
        let mut sets = alloc.family().sets().to_vec();
        assert!(sets.iter().all(|s| s.len() == 2));
        sets.sort();
        sets.dedup();
        assert_eq!(sets.len(), 4);
        assert!(check_spectrum_feasibility(&g, &alloc).is_feasible());
        assert!(check_oc_feasibility(&g, alloc.family()).is_feasible());
    }

    #[test]
    fn too_few_bands() {
        let g = ConnectivityGraph::complete(2);
        assert!(matches!(run_dsa(&g, 1, 0), Err(DsaError::InsufficientBands { required: 2, .. })));
    }

    #[test]
    fn occurrence_ordering_example() {
        // neighbors chose {R,G} and {R,Y}; B is unused, G and Y once each
        let (r, g, b, y) = (0, 1, 2, 3);
        let pick = choose_outgoing_set(4, &[cs(&[r, g]), cs(&[r, y])], &[0, 1, 2, 3]).unwrap();
        assert!(pick == cs(&[b, g]) || pick == cs(&[b, y]));
        assert!(pick.contains(b));
    }

    #[test]
    fn collision_repair_finds_a_distinct_set() {
        // all bands equally common: greedy prefix {0,1} is taken
        let taken = [cs(&[0, 1]), cs(&[2, 3]), cs(&[0, 2]), cs(&[1, 3])];
        let pick = choose_outgoing_set(4, &taken, &[0, 1, 2, 3]).unwrap();
        assert!(!taken.contains(&pick));
        assert_eq!(pick.len(), 2);
    }

    #[test]
    fn hand_built_violations() {
        let g = ConnectivityGraph::path(3);
        let fam = ColorSetFamily::new(2, vec![cs(&[0]), cs(&[0]), cs(&[1])]).unwrap();
        let mut sets = vec![ColorSet::EMPTY; g.link_count()];
        sets[g.link_id(0, 1).unwrap()] = cs(&[0]);
        sets[g.link_id(1, 2).unwrap()] = cs(&[0]);
        sets[g.link_id(1, 0).unwrap()] = cs(&[1]);
        let alloc = SpectrumAllocation::from_parts(fam, LinkColoring::new(2, sets).unwrap());
        let r = check_spectrum_feasibility(&g, &alloc);
        assert!(r.duplexing.contains(&(1, 0)));
        assert!(r.uncovered.contains(&(2, 1)));
    }

    #[test]
    fn leave_restricts_allocation() {
        let g = ConnectivityGraph::complete(4);
        let alloc = run_dsa(&g, 4, 5).unwrap();
        let (g2, a2) = apply_topology_change(&alloc, &g, &TopologyChange::Leave { node: 3 }, 0).unwrap();
        assert_eq!(g2, ConnectivityGraph::complete(3));
        assert!(check_spectrum_feasibility(&g2, &a2).is_feasible());
        for (id, &(a, b)) in g2.links().iter().enumerate() {
            assert_eq!(a2.link_bands(id), alloc.link_bands(g.link_id(a, b).unwrap()));
        }
    }

    #[test]
    fn join_path_end() {
        let g = ConnectivityGraph::build(&[(1, 2), (2, 1), (2, 3), (3, 2)]).unwrap();
        let (alloc, _) = run_dsa_with(&g, 3, 0, &deterministic()).unwrap();
        let change = TopologyChange::Join { node: 4, neighbors: vec![3] };
        let (g2, a2) = apply_topology_change(&alloc, &g, &change, 0).unwrap();
        let v4 = g2.node_of_label(4).unwrap();
        let v3 = g2.node_of_label(3).unwrap();
        assert_eq!(a2.node_bands(v4).len(), 1);
        assert_ne!(a2.node_bands(v4), a2.node_bands(v3));
        for v in 0..3 {
            assert_eq!(a2.node_bands(v), alloc.node_bands(v));
        }
        assert!(check_spectrum_feasibility(&g2, &a2).is_feasible());
    }

    #[test]
    fn join_over_degree_budget() {
        let g = ConnectivityGraph::path(3);
        let alloc = run_dsa(&g, 3, 0).unwrap();
        let change = TopologyChange::Join { node: 9, neighbors: vec![0, 1, 2] };
        assert!(matches!(
            apply_topology_change(&alloc, &g, &change, 0),
            Err(DsaError::DegreeBudgetExceeded { neighbors: 3, max_degree: 2 })
        ));
    }

    #[test]
    fn leave_that_disconnects_is_reported() {
        let g = ConnectivityGraph::path(3);
        let alloc = run_dsa(&g, 3, 0).unwrap();
        match apply_topology_change(&alloc, &g, &TopologyChange::Leave { node: 1 }, 0) {
            Err(DsaError::Disconnected { graph, allocation, components }) => {
                assert_eq!(components, 2);
                assert!(check_spectrum_feasibility(&graph, &allocation).is_feasible());
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
