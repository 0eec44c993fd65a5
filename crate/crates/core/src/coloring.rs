//! Link coloring through node outgoing color sets.
//!
//! A family `{OC_i}` of per-node outgoing band sets is feasible when
//!
//! * (i) `OC_i \ OC_j` is nonempty for every link `(i,j)`, and
//! * (ii) `⋃_{j ∈ O_i} OC_i \ OC_j = OC_i` for every node `i`.
//!
//! A feasible family induces a duplexing-free link coloring by giving link
//! `(i,j)` the bands `OC_i \ OC_j`. The minimum number of bands needed for a
//! graph of chromatic number `N` is [`q_min`]`(N)`, the smallest `q` whose
//! middle binomial coefficient reaches `N`.

use std::collections::HashMap;

use thiserror::Error;

use crate::colorset::{subsets_of_size, ColorSet, MAX_BANDS};
use crate::graph::{exact_coloring, ConnectivityGraph, LinkId, NodeId};
use crate::matching::max_bipartite_matching;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ColoringError {
    #[error("color family violates the feasibility conditions: {0:?}")]
    InfeasibleFamily(FeasibilityReport),
    #[error("no complete matching between subset layers of size {from} and {to} (universe {q})")]
    MatchingNotFound { q: usize, from: usize, to: usize },
    #[error("sets {0} and {1} are adjacent but comparable")]
    Comparable(usize, usize),
    #[error("set {index} is not a subset of the {q}-band universe")]
    OutOfUniverse { index: usize, q: usize },
    #[error("family has {got} sets, graph has {expected} nodes")]
    SizeMismatch { expected: usize, got: usize },
    #[error("band count {0} exceeds the supported maximum")]
    TooManyBands(usize),
    #[error("search too large: {0}")]
    TooLarge(String),
}

/// `binomial(q, ⌊q/2⌋)`, saturating at `u128::MAX`.
pub fn central_binomial(q: usize) -> u128 {
    let k = q / 2;
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (q - i) / (i + 1) stays integral at every step
        acc = match acc.checked_mul((q - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// Smallest `q ≥ 1` with `binomial(q, ⌊q/2⌋) ≥ n`.
pub fn q_min(n: usize) -> usize {
    assert!(n >= 1, "q_min is defined for n >= 1");
    (1..).find(|&q| central_binomial(q) >= n as u128).unwrap()
}

/// Per-node outgoing band sets over a `q`-band universe.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColorSetFamily {
    q: usize,
    sets: Vec<ColorSet>,
}

impl ColorSetFamily {
    pub fn new(q: usize, sets: Vec<ColorSet>) -> Result<Self, ColoringError> {
        if q > MAX_BANDS {
            return Err(ColoringError::TooManyBands(q));
        }
        let universe = ColorSet::full(q);
        if let Some(index) = sets.iter().position(|s| !s.is_subset(universe)) {
            return Err(ColoringError::OutOfUniverse { index, q });
        }
        Ok(ColorSetFamily { q, sets })
    }

    pub fn band_count(&self) -> usize {
        self.q
    }

    pub fn sets(&self) -> &[ColorSet] {
        &self.sets
    }

    pub fn set(&self, node: NodeId) -> ColorSet {
        self.sets[node]
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    /// Number of distinct bands actually used.
    pub fn used_bands(&self) -> usize {
        self.sets.iter().fold(ColorSet::EMPTY, |a, &s| a.union(s)).len()
    }
}

/// Violations of the two feasibility conditions. Empty lists mean feasible.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FeasibilityReport {
    pub empty_sets: Vec<NodeId>,
    /// Links `(i,j)` with `OC_i ⊆ OC_j`.
    pub condition_i: Vec<(NodeId, NodeId)>,
    /// Nodes whose outgoing bands are not all covered by their links.
    pub condition_ii: Vec<NodeId>,
}

impl FeasibilityReport {
    pub fn is_feasible(&self) -> bool {
        self.empty_sets.is_empty() && self.condition_i.is_empty() && self.condition_ii.is_empty()
    }
}

pub fn check_oc_feasibility(g: &ConnectivityGraph, family: &ColorSetFamily) -> FeasibilityReport {
    assert_eq!(family.len(), g.node_count(), "family must cover every node");
    let oc = family.sets();
    let mut report = FeasibilityReport::default();
    for i in 0..g.node_count() {
        if oc[i].is_empty() {
            report.empty_sets.push(i);
        }
        let covered = g.neighbors(i).iter().fold(ColorSet::EMPTY, |acc, &j| acc.union(oc[i].difference(oc[j])));
        if covered != oc[i] {
            report.condition_ii.push(i);
        }
    }
    for &(i, j) in g.links() {
        if oc[i].difference(oc[j]).is_empty() {
            report.condition_i.push((i, j));
        }
    }
    report
}

/// Per-link active band sets `Q_ij`, indexed by [`LinkId`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkColoring {
    q: usize,
    sets: Vec<ColorSet>,
}

impl LinkColoring {
    pub fn new(q: usize, sets: Vec<ColorSet>) -> Result<Self, ColoringError> {
        if q > MAX_BANDS {
            return Err(ColoringError::TooManyBands(q));
        }
        let universe = ColorSet::full(q);
        if let Some(index) = sets.iter().position(|s| !s.is_subset(universe)) {
            return Err(ColoringError::OutOfUniverse { index, q });
        }
        Ok(LinkColoring { q, sets })
    }

    pub fn band_count(&self) -> usize {
        self.q
    }

    pub fn sets(&self) -> &[ColorSet] {
        &self.sets
    }

    pub fn set(&self, link: LinkId) -> ColorSet {
        self.sets[link]
    }

    /// `L_q`: links active on `band`.
    pub fn active_links(&self, band: usize) -> Vec<LinkId> {
        (0..self.sets.len()).filter(|&l| self.sets[l].contains(band)).collect()
    }

    /// Links with no band.
    pub fn coverage_violations(&self) -> Vec<LinkId> {
        (0..self.sets.len()).filter(|&l| self.sets[l].is_empty()).collect()
    }

    /// `(node, band)` pairs where the node both sends and receives on the band.
    pub fn duplexing_violations(&self, g: &ConnectivityGraph) -> Vec<(NodeId, usize)> {
        let mut out = Vec::new();
        for node in 0..g.node_count() {
            let sending = g.out_links(node).iter().fold(ColorSet::EMPTY, |a, &l| a.union(self.sets[l]));
            let receiving = g.in_links(node).iter().fold(ColorSet::EMPTY, |a, &l| a.union(self.sets[l]));
            out.extend(sending.intersection(receiving).iter().map(|b| (node, b)));
        }
        out
    }
}

/// `Q_ij = OC_i \ OC_j` for every link.
pub fn assign_link_colors(g: &ConnectivityGraph, family: &ColorSetFamily) -> Result<LinkColoring, ColoringError> {
    let report = check_oc_feasibility(g, family);
    if !report.is_feasible() {
        return Err(ColoringError::InfeasibleFamily(report));
    }
    let sets = g.links().iter().map(|&(i, j)| family.set(i).difference(family.set(j))).collect();
    LinkColoring::new(family.band_count(), sets)
}

/// Shrinks each `OC_i` to `⋃_j OC_i \ OC_j` until nothing changes. Keeps
/// condition (i) and establishes condition (ii) without adding bands.
pub fn repair_condition_ii(g: &ConnectivityGraph, sets: &mut [ColorSet]) {
    loop {
        let mut changed = false;
        for i in 0..g.node_count() {
            let covered = g.neighbors(i).iter().fold(ColorSet::EMPTY, |acc, &j| acc.union(sets[i].difference(sets[j])));
            if covered != sets[i] {
                sets[i] = covered;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
}

/// Family built from a proper node labelling: label `k` gets the `k`-th
/// `⌊q/2⌋`-subset, followed by the condition-(ii) repair.
pub fn family_from_node_labels(
    g: &ConnectivityGraph,
    labels: &[usize],
    q: usize,
) -> Result<ColorSetFamily, ColoringError> {
    let k = (q / 2).max(1);
    let needed = labels.iter().max().map_or(0, |&m| m + 1);
    let pool: Vec<ColorSet> = subsets_of_size(q, k).take(needed).collect();
    if pool.len() < needed {
        return Err(ColoringError::InfeasibleFamily(FeasibilityReport::default()));
    }
    let mut sets: Vec<ColorSet> = labels.iter().map(|&c| pool[c]).collect();
    repair_condition_ii(g, &mut sets);
    let family = ColorSetFamily::new(q, sets)?;
    let report = check_oc_feasibility(g, &family);
    if !report.is_feasible() {
        return Err(ColoringError::InfeasibleFamily(report));
    }
    Ok(family)
}

/// Minimum-band feasible family from an exact minimum node coloring; uses
/// exactly `q_min(χ(G))` bands.
pub fn minimal_family(g: &ConnectivityGraph) -> Result<ColorSetFamily, ColoringError> {
    let labels = exact_coloring(g);
    let chi = labels.iter().max().map_or(1, |&m| m + 1);
    family_from_node_labels(g, &labels, q_min(chi))
}

/// Makes every set of the family have exactly `⌊q/2⌋` elements (at least
/// one), by repeatedly matching the largest layer onto its children or the
/// smallest layer onto its parents.
///
/// Adjacent sets (pairs in `adjacency`) must be mutually non-containing and
/// stay so. Equal input sets map to equal outputs, distinct ones to
/// distinct outputs within the layer being moved. All outputs stay inside
/// the `q`-band universe.
pub fn equalize_family(
    q: usize,
    family: &[ColorSet],
    adjacency: &[(usize, usize)],
) -> Result<Vec<ColorSet>, ColoringError> {
    if q > MAX_BANDS {
        return Err(ColoringError::TooManyBands(q));
    }
    let universe = ColorSet::full(q);
    if let Some(index) = family.iter().position(|s| !s.is_subset(universe)) {
        return Err(ColoringError::OutOfUniverse { index, q });
    }
    if let Some(&(a, b)) = adjacency.iter().find(|&&(a, b)| !family[a].incomparable(family[b])) {
        return Err(ColoringError::Comparable(a, b));
    }
    let target = (q / 2).max(1);
    let mut sets = family.to_vec();
    loop {
        let Some(min) = sets.iter().map(|s| s.len()).min() else {
            return Ok(sets);
        };
        let max = sets.iter().map(|s| s.len()).max().unwrap();
        if min == target && max == target {
            return Ok(sets);
        }
        if max > target {
            shift_layer(q, &mut sets, max, max - 1)?;
        }
        if min < target {
            shift_layer(q, &mut sets, min, min + 1)?;
        }
    }
}

/// Replaces every set of size `from` by a distinct neighbor of size `to`
/// (`to = from ± 1`) through a complete matching.
fn shift_layer(q: usize, sets: &mut [ColorSet], from: usize, to: usize) -> Result<(), ColoringError> {
    let mut distinct: Vec<ColorSet> = sets.iter().copied().filter(|s| s.len() == from).collect();
    distinct.sort_unstable();
    distinct.dedup();

    let universe = ColorSet::full(q);
    let mut right_index: HashMap<ColorSet, usize> = HashMap::new();
    let mut right: Vec<ColorSet> = Vec::new();
    let adjacency: Vec<Vec<usize>> = distinct
        .iter()
        .map(|&b| {
            let candidates: Vec<ColorSet> = if to < from {
                b.iter().map(|x| b.without(x)).collect()
            } else {
                universe.difference(b).iter().map(|x| b.with(x)).collect()
            };
            candidates
                .into_iter()
                .map(|c| {
                    *right_index.entry(c).or_insert_with(|| {
                        right.push(c);
                        right.len() - 1
                    })
                })
                .collect()
        })
        .collect();
    let matching = max_bipartite_matching(&adjacency, right.len());
    let mut image = HashMap::with_capacity(distinct.len());
    for (k, m) in matching.iter().enumerate() {
        match m {
            Some(r) => {
                image.insert(distinct[k], right[*r]);
            }
            None => return Err(ColoringError::MatchingNotFound { q, from, to }),
        }
    }
    for s in sets.iter_mut().filter(|s| s.len() == from) {
        *s = image[s];
    }
    Ok(())
}

/// Limits for [`brute_force_min_colors`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchBudget {
    pub max_nodes: usize,
    pub max_bands: usize,
}

impl Default for SearchBudget {
    fn default() -> Self {
        SearchBudget { max_nodes: 6, max_bands: 8 }
    }
}

/// Minimum number of bands over all feasible families, by exhaustive search.
///
/// Independent of [`q_min`] and of the chromatic number: every assignment of
/// nonempty subsets is enumerated, up to renaming of bands.
pub fn brute_force_min_colors(g: &ConnectivityGraph, budget: SearchBudget) -> Result<usize, ColoringError> {
    let n = g.node_count();
    if n > budget.max_nodes {
        return Err(ColoringError::TooLarge(format!("{n} nodes > {}", budget.max_nodes)));
    }
    // breadth-first order so that link constraints bite early
    let order = {
        let dist = g.hop_distances(0);
        let mut v: Vec<NodeId> = (0..n).collect();
        v.sort_by_key(|&x| (dist[x], x));
        v
    };
    for q in 1..=budget.max_bands {
        let mut sets = vec![ColorSet::EMPTY; n];
        if search(g, &order, 0, q, 0, &mut sets) {
            return Ok(q);
        }
    }
    Err(ColoringError::TooLarge(format!("no family within {} bands", budget.max_bands)))
}

fn search(
    g: &ConnectivityGraph,
    order: &[NodeId],
    depth: usize,
    q: usize,
    fresh: usize,
    sets: &mut [ColorSet],
) -> bool {
    if depth == order.len() {
        let mut repaired = sets.to_vec();
        repair_condition_ii(g, &mut repaired);
        let fam = ColorSetFamily { q, sets: repaired };
        return check_oc_feasibility(g, &fam).is_feasible();
    }
    let v = order[depth];
    let old = ColorSet::full(fresh);
    for bits in 1..(1u64 << q) {
        let s = ColorSet::from_bits(bits);
        // canonical form: new bands appear as the next unused indices
        let new = s.difference(old);
        let added = new.len();
        if new != ColorSet::from_bits(ColorSet::full(fresh + added).bits() & !old.bits()) {
            continue;
        }
        let ok = g.neighbors(v).iter().filter(|&&u| !sets[u].is_empty()).all(|&u| s.incomparable(sets[u]));
        if !ok {
            continue;
        }
        sets[v] = s;
        if search(g, order, depth + 1, q, fresh + added, sets) {
            return true;
        }
        sets[v] = ColorSet::EMPTY;
    }
    false
}
