//! Connectivity graphs, chromatic numbers and interference-graph statistics.
//!
//! Nodes are dense indices `0..n`; the integer ids a caller supplies are kept
//! as labels so results can be reported in the caller's numbering. Links are
//! ordered pairs and the graph must be link-symmetric: `(i,j)` is a link
//! exactly when `(j,i)` is.

use std::collections::{BTreeSet, HashMap, VecDeque};

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

pub type NodeId = usize;
pub type LinkId = usize;

/// Default node-count limit for exact chromatic-number search.
pub const DEFAULT_EXACT_LIMIT: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("edge list is empty")]
    Empty,
    #[error("self-loop at node {0}")]
    SelfLoop(i64),
    #[error("link ({from},{to}) has no reverse link")]
    NotSymmetric { from: i64, to: i64 },
    #[error("graph is not connected ({components} components)")]
    NotConnected { components: usize },
    #[error("node {0} is out of range")]
    UnknownNode(i64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnectivityGraph {
    labels: Vec<i64>,
    links: Vec<(NodeId, NodeId)>,
    neighbors: Vec<Vec<NodeId>>,
    out_links: Vec<Vec<LinkId>>,
    in_links: Vec<Vec<LinkId>>,
    index: HashMap<(NodeId, NodeId), LinkId>,
}

impl ConnectivityGraph {
    /// Validates an edge list given in external node ids.
    ///
    /// Asymmetric input is rejected, never closed silently. Duplicate
    /// entries are ignored.
    pub fn build(edges: &[(i64, i64)]) -> Result<Self, GraphError> {
        if edges.is_empty() {
            return Err(GraphError::Empty);
        }
        let mut set = BTreeSet::new();
        for &(a, b) in edges {
            if a == b {
                return Err(GraphError::SelfLoop(a));
            }
            set.insert((a, b));
        }
        if let Some(&(a, b)) = set.iter().find(|&&(a, b)| !set.contains(&(b, a))) {
            return Err(GraphError::NotSymmetric { from: a, to: b });
        }
        let labels: Vec<i64> = set.iter().flat_map(|&(a, b)| [a, b]).collect::<BTreeSet<_>>().into_iter().collect();
        let dense: HashMap<i64, NodeId> = labels.iter().enumerate().map(|(k, &l)| (l, k)).collect();
        let links: Vec<_> = set.iter().map(|(a, b)| (dense[a], dense[b])).collect();
        let g = Self::assemble(labels, links);
        let components = g.component_count();
        if components > 1 {
            return Err(GraphError::NotConnected { components });
        }
        Ok(g)
    }

    /// Builds a graph on nodes `0..n` from undirected pairs, inserting both
    /// directions of every pair.
    pub fn from_undirected(n: usize, pairs: &[(NodeId, NodeId)]) -> Result<Self, GraphError> {
        let mut edges = Vec::with_capacity(2 * pairs.len());
        for &(a, b) in pairs {
            if a >= n {
                return Err(GraphError::UnknownNode(a as i64));
            }
            if b >= n {
                return Err(GraphError::UnknownNode(b as i64));
            }
            edges.push((a as i64, b as i64));
            edges.push((b as i64, a as i64));
        }
        let g = Self::build(&edges)?;
        if g.node_count() != n {
            return Err(GraphError::NotConnected { components: n - g.node_count() + 1 });
        }
        Ok(g)
    }

    /// Assembles a graph without the connectivity check. `links` must be
    /// symmetric and free of self-loops.
    pub(crate) fn assemble(labels: Vec<i64>, mut links: Vec<(NodeId, NodeId)>) -> Self {
        links.sort_unstable();
        links.dedup();
        let n = labels.len();
        let mut neighbors = vec![Vec::new(); n];
        let mut out_links = vec![Vec::new(); n];
        let mut in_links = vec![Vec::new(); n];
        let mut index = HashMap::with_capacity(links.len());
        for (id, &(a, b)) in links.iter().enumerate() {
            neighbors[a].push(b);
            out_links[a].push(id);
            in_links[b].push(id);
            index.insert((a, b), id);
        }
        ConnectivityGraph { labels, links, neighbors, out_links, in_links, index }
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn links(&self) -> &[(NodeId, NodeId)] {
        &self.links
    }

    pub fn link(&self, id: LinkId) -> (NodeId, NodeId) {
        self.links[id]
    }

    pub fn link_id(&self, from: NodeId, to: NodeId) -> Option<LinkId> {
        self.index.get(&(from, to)).copied()
    }

    /// The reverse link `(j,i)` of link `(i,j)`.
    pub fn reverse(&self, id: LinkId) -> LinkId {
        let (a, b) = self.links[id];
        self.index[&(b, a)]
    }

    /// Neighbor set `O_i`, ascending.
    pub fn neighbors(&self, node: NodeId) -> &[NodeId] {
        &self.neighbors[node]
    }

    pub fn out_links(&self, node: NodeId) -> &[LinkId] {
        &self.out_links[node]
    }

    pub fn in_links(&self, node: NodeId) -> &[LinkId] {
        &self.in_links[node]
    }

    pub fn degree(&self, node: NodeId) -> usize {
        self.neighbors[node].len()
    }

    /// `Δ(G)`.
    pub fn max_degree(&self) -> usize {
        self.neighbors.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    pub fn label(&self, node: NodeId) -> i64 {
        self.labels[node]
    }

    pub fn node_of_label(&self, label: i64) -> Option<NodeId> {
        self.labels.iter().position(|&l| l == label)
    }

    pub fn component_count(&self) -> usize {
        let n = self.node_count();
        let mut seen = vec![false; n];
        let mut components = 0;
        for start in 0..n {
            if seen[start] {
                continue;
            }
            components += 1;
            seen[start] = true;
            let mut queue = VecDeque::from([start]);
            while let Some(v) = queue.pop_front() {
                for &u in &self.neighbors[v] {
                    if !seen[u] {
                        seen[u] = true;
                        queue.push_back(u);
                    }
                }
            }
        }
        components
    }

    /// Hop distances from `source`; `usize::MAX` marks unreachable nodes.
    pub fn hop_distances(&self, source: NodeId) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.node_count()];
        dist[source] = 0;
        let mut queue = VecDeque::from([source]);
        while let Some(v) = queue.pop_front() {
            for &u in &self.neighbors[v] {
                if dist[u] == usize::MAX {
                    dist[u] = dist[v] + 1;
                    queue.push_back(u);
                }
            }
        }
        dist
    }

    /// Removes a node and its incident links. Dense ids above `node` shift
    /// down by one; labels are kept.
    pub(crate) fn without_node(&self, node: NodeId) -> Self {
        let remap = |v: NodeId| if v > node { v - 1 } else { v };
        let labels = self.labels.iter().enumerate().filter(|&(k, _)| k != node).map(|(_, &l)| l).collect();
        let links =
            self.links.iter().filter(|&&(a, b)| a != node && b != node).map(|&(a, b)| (remap(a), remap(b))).collect();
        Self::assemble(labels, links)
    }

    /// Appends a node with the given label, linked both ways to `neighbors`.
    pub(crate) fn with_node(&self, label: i64, neighbors: &[NodeId]) -> Self {
        let mut labels = self.labels.clone();
        labels.push(label);
        let new = self.node_count();
        let mut links = self.links.clone();
        for &j in neighbors {
            links.push((new, j));
            links.push((j, new));
        }
        Self::assemble(labels, links)
    }

    /// Undirected adjacency as sorted pairs `a < b`.
    pub fn undirected_pairs(&self) -> Vec<(NodeId, NodeId)> {
        self.links.iter().copied().filter(|&(a, b)| a < b).collect()
    }

    pub fn complete(n: usize) -> Self {
        let pairs: Vec<_> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
        Self::from_undirected(n, &pairs).expect("complete graph needs n >= 2")
    }

    pub fn path(n: usize) -> Self {
        let pairs: Vec<_> = (1..n).map(|k| (k - 1, k)).collect();
        Self::from_undirected(n, &pairs).expect("path needs n >= 2")
    }

    pub fn cycle(n: usize) -> Self {
        assert!(n >= 3, "cycle needs n >= 3");
        let pairs: Vec<_> = (0..n).map(|k| (k, (k + 1) % n)).collect();
        Self::from_undirected(n, &pairs).expect("cycle is valid")
    }

    /// Star with node 0 at the center.
    pub fn star(leaves: usize) -> Self {
        let pairs: Vec<_> = (1..=leaves).map(|k| (0, k)).collect();
        Self::from_undirected(leaves + 1, &pairs).expect("star needs a leaf")
    }

    /// Random connected graph: a uniformly shuffled random spanning tree
    /// plus each remaining pair with probability `extra`.
    pub fn random_connected<R: Rng + ?Sized>(n: usize, extra: f64, rng: &mut R) -> Self {
        assert!(n >= 2, "need at least two nodes");
        let mut order: Vec<NodeId> = (0..n).collect();
        order.shuffle(rng);
        let mut pairs = BTreeSet::new();
        for k in 1..n {
            let parent = order[rng.gen_range(0..k)];
            let (a, b) = (order[k].min(parent), order[k].max(parent));
            pairs.insert((a, b));
        }
        for a in 0..n {
            for b in a + 1..n {
                if rng.gen_bool(extra) {
                    pairs.insert((a, b));
                }
            }
        }
        let pairs: Vec<_> = pairs.into_iter().collect();
        Self::from_undirected(n, &pairs).expect("spanning tree keeps graph connected")
    }
}

/// Result of [`chromatic_number`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChromaticNumber {
    pub value: usize,
    pub exact: bool,
}

/// `χ(G)`: exact by DSATUR-ordered branch and bound when the graph has at
/// most `exact_limit` nodes, otherwise the greedy DSATUR bound (which never
/// exceeds `Δ(G)+1`).
pub fn chromatic_number(g: &ConnectivityGraph, exact_limit: usize) -> ChromaticNumber {
    if g.node_count() <= exact_limit {
        let colors = exact_coloring(g);
        ChromaticNumber { value: color_count(&colors), exact: true }
    } else {
        ChromaticNumber { value: color_count(&greedy_coloring(g)), exact: false }
    }
}

fn color_count(colors: &[usize]) -> usize {
    colors.iter().max().map_or(0, |&c| c + 1)
}

/// Greedy DSATUR node coloring; colors are `0..k`.
pub fn greedy_coloring(g: &ConnectivityGraph) -> Vec<usize> {
    let n = g.node_count();
    let mut colors = vec![usize::MAX; n];
    for _ in 0..n {
        let v = pick_saturated(g, &colors);
        let used: BTreeSet<usize> = g.neighbors(v).iter().map(|&u| colors[u]).collect();
        colors[v] = (0..).find(|c| !used.contains(c)).unwrap();
    }
    colors
}

/// Uncolored node with the largest saturation, ties to the largest degree,
/// then to the lowest index.
fn pick_saturated(g: &ConnectivityGraph, colors: &[usize]) -> NodeId {
    (0..g.node_count())
        .filter(|&v| colors[v] == usize::MAX)
        .max_by_key(|&v| {
            let sat = g
                .neighbors(v)
                .iter()
                .filter(|&&u| colors[u] != usize::MAX)
                .map(|&u| colors[u])
                .collect::<BTreeSet<_>>()
                .len();
            (sat, g.degree(v), std::cmp::Reverse(v))
        })
        .expect("an uncolored node remains")
}

/// Minimum node coloring by branch and bound.
pub fn exact_coloring(g: &ConnectivityGraph) -> Vec<usize> {
    let mut best = greedy_coloring(g);
    let mut best_count = color_count(&best);
    let mut colors = vec![usize::MAX; g.node_count()];
    branch(g, &mut colors, 0, 0, &mut best, &mut best_count);
    best
}

fn branch(
    g: &ConnectivityGraph,
    colors: &mut [usize],
    colored: usize,
    used: usize,
    best: &mut Vec<usize>,
    best_count: &mut usize,
) {
    if used >= *best_count {
        return;
    }
    if colored == g.node_count() {
        *best_count = used;
        best.copy_from_slice(colors);
        return;
    }
    let v = pick_saturated(g, colors);
    // a new color index beyond `used` is interchangeable with any other new one
    for c in 0..=used {
        if used.max(c + 1) >= *best_count {
            continue;
        }
        if g.neighbors(v).iter().any(|&u| colors[u] == c) {
            continue;
        }
        colors[v] = c;
        branch(g, colors, colored + 1, used.max(c + 1), best, best_count);
        colors[v] = usize::MAX;
    }
}

/// Degree statistics of the interference graph `G̃`, whose vertices are the
/// links of `G`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterferenceStats {
    pub vertex_count: usize,
    /// `Δ(G̃)`.
    pub max_degree: usize,
    /// Degree of each link, indexed by [`LinkId`].
    pub link_degrees: Vec<usize>,
}

pub fn interference_stats(g: &ConnectivityGraph) -> InterferenceStats {
    let link_degrees: Vec<usize> = g.links().iter().map(|&(i, j)| g.degree(i) + g.degree(j) - 1).collect();
    InterferenceStats {
        vertex_count: g.link_count(),
        max_degree: link_degrees.iter().copied().max().unwrap_or(0),
        link_degrees,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn smallest_symmetric_graph() {
        let g = ConnectivityGraph::build(&[(1, 2), (2, 1)]).unwrap();
        assert_eq!(g.node_count(), 2);
        assert_eq!(g.link_count(), 2);
        assert_eq!(g.labels(), &[1, 2]);
    }

    #[test]
    fn rejects_bad_edge_lists() {
        assert_eq!(ConnectivityGraph::build(&[(1, 2)]), Err(GraphError::NotSymmetric { from: 1, to: 2 }));
        assert_eq!(
            ConnectivityGraph::build(&[(1, 2), (2, 1), (3, 4), (4, 3)]),
            Err(GraphError::NotConnected { components: 2 })
        );
        assert_eq!(ConnectivityGraph::build(&[(3, 3)]), Err(GraphError::SelfLoop(3)));
        assert_eq!(ConnectivityGraph::build(&[]), Err(GraphError::Empty));
    }

    #[test]
    fn chromatic_numbers_of_small_graphs() {
        let k4 = ConnectivityGraph::complete(4);
        assert_eq!(chromatic_number(&k4, 16), ChromaticNumber { value: 4, exact: true });
        let p3 = ConnectivityGraph::path(3);
        assert_eq!(chromatic_number(&p3, 16), ChromaticNumber { value: 2, exact: true });
        let c5 = ConnectivityGraph::cycle(5);
        assert_eq!(chromatic_number(&c5, 16), ChromaticNumber { value: 3, exact: true });
        let c6 = ConnectivityGraph::cycle(6);
        assert_eq!(chromatic_number(&c6, 16).value, 2);
        let greedy = chromatic_number(&c5, 2);
        assert!(!greedy.exact);
        assert!(greedy.value <= c5.max_degree() + 1);
    }

    #[test]
    fn exact_coloring_is_proper() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..30 {
            let g = ConnectivityGraph::random_connected(10, 0.4, &mut rng);
            let colors = exact_coloring(&g);
            for &(a, b) in g.links() {
                assert_ne!(colors[a], colors[b]);
            }
            let greedy = greedy_coloring(&g);
            assert!(color_count(&colors) <= color_count(&greedy));
            assert!(color_count(&greedy) <= g.max_degree() + 1);
        }
    }

    #[test]
    fn interference_degrees() {
        let k4 = interference_stats(&ConnectivityGraph::complete(4));
        assert_eq!((k4.max_degree, k4.vertex_count), (5, 12));
        assert_eq!(interference_stats(&ConnectivityGraph::path(3)).max_degree, 2);
        let star = ConnectivityGraph::star(3);
        let s = interference_stats(&star);
        assert_eq!(s.max_degree, 3);
        assert_eq!(s.max_degree, star.max_degree());
    }

    #[test]
    fn reverse_and_lookup() {
        let g = ConnectivityGraph::cycle(4);
        for id in 0..g.link_count() {
            let (a, b) = g.link(id);
            assert_eq!(g.link(g.reverse(id)), (b, a));
            assert_eq!(g.link_id(a, b), Some(id));
        }
    }
}
