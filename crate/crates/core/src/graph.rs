//! Simple undirected graphs, edge-list I/O, synthetic generators and
//! random-walk subgraph sampling.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{HrgError, Result};

pub type NodeId = u32;

/// Seeded generator used by every stochastic routine in the crate.
pub(crate) fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Undirected simple graph. Self-loops and duplicate edges are rejected on
/// insertion, so the invariants hold for every value of this type.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Graph {
    adj: BTreeMap<NodeId, BTreeSet<NodeId>>,
    edge_count: usize,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a graph from an edge iterator, silently dropping self-loops and
    /// duplicates.
    pub fn from_edges<I: IntoIterator<Item = (NodeId, NodeId)>>(edges: I) -> Self {
        let mut g = Graph::new();
        for (u, v) in edges {
            g.add_edge(u, v);
        }
        g
    }

    pub fn add_node(&mut self, v: NodeId) {
        self.adj.entry(v).or_default();
    }

    /// Inserts `{u, v}`. Returns `false` for self-loops and existing edges.
    pub fn add_edge(&mut self, u: NodeId, v: NodeId) -> bool {
        if u == v || self.has_edge(u, v) {
            return false;
        }
        self.adj.entry(u).or_default().insert(v);
        self.adj.entry(v).or_default().insert(u);
        self.edge_count += 1;
        true
    }

    pub fn remove_edge(&mut self, u: NodeId, v: NodeId) -> bool {
        let removed = self.adj.get_mut(&u).is_some_and(|n| n.remove(&v));
        if removed {
            if let Some(n) = self.adj.get_mut(&v) {
                n.remove(&u);
            }
            self.edge_count -= 1;
        }
        removed
    }

    pub fn has_edge(&self, u: NodeId, v: NodeId) -> bool {
        self.adj.get(&u).is_some_and(|n| n.contains(&v))
    }

    pub fn contains_node(&self, v: NodeId) -> bool {
        self.adj.contains_key(&v)
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn is_empty(&self) -> bool {
        self.adj.is_empty()
    }

    /// Nodes in ascending id order.
    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.adj.keys().copied()
    }

    /// Each edge exactly once as `(u, v)` with `u < v`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.adj.iter().flat_map(|(&u, n)| n.range(u + 1..).map(move |&v| (u, v)))
    }

    pub fn neighbors(&self, v: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.adj.get(&v).into_iter().flat_map(|n| n.iter().copied())
    }

    pub fn neighbor_set(&self, v: NodeId) -> Option<&BTreeSet<NodeId>> {
        self.adj.get(&v)
    }

    pub fn degree(&self, v: NodeId) -> usize {
        self.adj.get(&v).map_or(0, BTreeSet::len)
    }

    /// Subgraph induced by `keep` (nodes absent from the graph are ignored).
    pub fn induced_subgraph(&self, keep: &BTreeSet<NodeId>) -> Graph {
        let mut g = Graph::new();
        for &v in keep {
            if let Some(n) = self.adj.get(&v) {
                g.add_node(v);
                for &u in n.range(v + 1..) {
                    if keep.contains(&u) {
                        g.add_edge(v, u);
                    }
                }
            }
        }
        g
    }

    /// Connected components, each sorted, ordered by smallest member.
    pub fn connected_components(&self) -> Vec<Vec<NodeId>> {
        let mut seen = BTreeSet::new();
        let mut comps = Vec::new();
        for start in self.nodes() {
            if !seen.insert(start) {
                continue;
            }
            let mut comp = vec![start];
            let mut queue = VecDeque::from([start]);
            while let Some(v) = queue.pop_front() {
                for u in self.neighbors(v) {
                    if seen.insert(u) {
                        comp.push(u);
                        queue.push_back(u);
                    }
                }
            }
            comp.sort_unstable();
            comps.push(comp);
        }
        comps
    }

    pub fn is_connected(&self) -> bool {
        !self.is_empty() && self.connected_components().len() == 1
    }

    /// Applies a node relabeling. `map` must be injective on the node set.
    pub fn relabel(&self, map: &BTreeMap<NodeId, NodeId>) -> Graph {
        let mut g = Graph::new();
        for v in self.nodes() {
            g.add_node(map[&v]);
        }
        for (u, v) in self.edges() {
            g.add_edge(map[&u], map[&v]);
        }
        g
    }

    pub fn degree_sequence(&self) -> Vec<usize> {
        self.adj.values().map(BTreeSet::len).collect()
    }
}

/// `counts[k]` = number of nodes of degree exactly `k`, for `k >= 1`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DegreeHistogram {
    pub counts: BTreeMap<usize, usize>,
}

pub fn degree_histogram(graph: &Graph) -> DegreeHistogram {
    let mut counts = BTreeMap::new();
    for d in graph.degree_sequence() {
        if d > 0 {
            *counts.entry(d).or_insert(0) += 1;
        }
    }
    DegreeHistogram { counts }
}

/// Reads a whitespace-separated edge list. Lines starting with `#` and blank
/// lines are skipped; tokens past the second are ignored.
pub fn read_edge_list<R: BufRead>(reader: R) -> Result<Graph> {
    let mut g = Graph::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut tokens = trimmed.split_whitespace();
        let mut next_id = || -> Result<NodeId> {
            let tok = tokens
                .next()
                .ok_or_else(|| HrgError::Parse { line: idx + 1, message: "expected two node ids".into() })?;
            tok.parse::<NodeId>()
                .map_err(|e| HrgError::Parse { line: idx + 1, message: format!("bad node id {tok:?}: {e}") })
        };
        let u = next_id()?;
        let v = next_id()?;
        g.add_edge(u, v);
    }
    Ok(g)
}

pub fn parse_edge_list(text: &str) -> Result<Graph> {
    read_edge_list(text.as_bytes())
}

pub fn write_edge_list<W: Write>(graph: &Graph, mut out: W) -> std::io::Result<()> {
    for (u, v) in graph.edges() {
        writeln!(out, "{u} {v}")?;
    }
    Ok(())
}

pub fn edge_list_string(graph: &Graph) -> String {
    let mut s = String::new();
    for (u, v) in graph.edges() {
        let _ = writeln!(s, "{u} {v}");
    }
    s
}

/// Preferential attachment: `attach_edges` isolated seed nodes, then each new
/// node links to `attach_edges` distinct existing nodes chosen proportionally
/// to degree. Produces `attach_edges * (num_nodes - attach_edges)` edges.
pub fn generate_barabasi_albert(num_nodes: usize, attach_edges: usize, seed: u64) -> Result<Graph> {
    if attach_edges == 0 || attach_edges >= num_nodes {
        return Err(HrgError::Argument(format!(
            "barabasi-albert needs 0 < attach_edges < num_nodes (got {attach_edges}, {num_nodes})"
        )));
    }
    let mut rng = seeded_rng(seed);
    let mut g = Graph::new();
    let mut targets: Vec<NodeId> = (0..attach_edges as NodeId).collect();
    let mut repeated: Vec<NodeId> = Vec::with_capacity(2 * attach_edges * num_nodes);
    for source in attach_edges as NodeId..num_nodes as NodeId {
        for &t in &targets {
            g.add_edge(source, t);
        }
        repeated.extend_from_slice(&targets);
        repeated.extend(std::iter::repeat_n(source, attach_edges));
        targets.clear();
        while targets.len() < attach_edges {
            let pick = repeated[rng.gen_range(0..repeated.len())];
            if !targets.contains(&pick) {
                targets.push(pick);
            }
        }
    }
    Ok(g)
}

/// Ring lattice with `ring_degree` neighbours per node; each lattice edge is
/// rewired with probability `rewire_prob` to a uniformly chosen node that
/// creates no self-loop or duplicate.
pub fn generate_watts_strogatz(num_nodes: usize, ring_degree: usize, rewire_prob: f64, seed: u64) -> Result<Graph> {
    if ring_degree == 0 || !ring_degree.is_multiple_of(2) || ring_degree >= num_nodes {
        return Err(HrgError::Argument(format!(
            "watts-strogatz needs an even ring_degree in [2, num_nodes) (got {ring_degree}, {num_nodes})"
        )));
    }
    if !(0.0..=1.0).contains(&rewire_prob) {
        return Err(HrgError::Argument(format!("rewire_prob {rewire_prob} not in [0, 1]")));
    }
    let n = num_nodes as NodeId;
    let half = ring_degree as NodeId / 2;
    let mut g = Graph::new();
    for j in 1..=half {
        for u in 0..n {
            g.add_edge(u, (u + j) % n);
        }
    }
    let mut rng = seeded_rng(seed);
    for j in 1..=half {
        for u in 0..n {
            if rng.gen::<f64>() >= rewire_prob || g.degree(u) >= num_nodes - 1 {
                continue;
            }
            let v = (u + j) % n;
            let w = loop {
                let w = rng.gen_range(0..n);
                if w != u && !g.has_edge(u, w) {
                    break w;
                }
            };
            g.remove_edge(u, v);
            g.add_edge(u, w);
        }
    }
    Ok(g)
}

/// Chung-Lu: each pair `{u, v}` is an edge independently with probability
/// `min(1, w_u w_v / sum(w))`, `w` being the target degree sequence. All
/// target nodes are kept, isolated or not.
pub fn generate_chung_lu(target: &Graph, seed: u64) -> Result<Graph> {
    if target.is_empty() {
        return Err(HrgError::Argument("chung-lu target graph is empty".into()));
    }
    let nodes: Vec<NodeId> = target.nodes().collect();
    let weights: Vec<f64> = nodes.iter().map(|&v| target.degree(v) as f64).collect();
    let total: f64 = weights.iter().sum();
    let mut g = Graph::new();
    for &v in &nodes {
        g.add_node(v);
    }
    if total == 0.0 {
        return Ok(g);
    }
    let mut rng = seeded_rng(seed);
    for i in 0..nodes.len() {
        for j in i + 1..nodes.len() {
            let p = (weights[i] * weights[j] / total).min(1.0);
            if rng.gen::<f64>() < p {
                g.add_edge(nodes[i], nodes[j]);
            }
        }
    }
    Ok(g)
}

/// Collects `size` nodes with a random walk from a uniformly chosen start
/// node (among components large enough) and returns their induced subgraph.
/// A walk that stops finding new nodes jumps back to a random visited node.
pub fn sample_subgraph(graph: &Graph, size: usize, seed: u64) -> Result<Graph> {
    if size == 0 {
        return Err(HrgError::Argument("sample size must be positive".into()));
    }
    let eligible: Vec<NodeId> =
        graph.connected_components().into_iter().filter(|c| c.len() >= size).flatten().collect();
    if eligible.is_empty() {
        return Err(HrgError::Sampling(format!("no connected component with {size} nodes")));
    }
    let mut rng = seeded_rng(seed);
    let start = eligible[rng.gen_range(0..eligible.len())];
    let mut visited = vec![start];
    let mut seen = BTreeSet::from([start]);
    let mut current = start;
    let patience = 10 * size + 100;
    let mut stalled = 0;
    while visited.len() < size {
        let nbrs = &graph.adj[&current];
        let next = *nbrs.iter().nth(rng.gen_range(0..nbrs.len())).expect("non-empty");
        if seen.insert(next) {
            visited.push(next);
            stalled = 0;
        } else {
            stalled += 1;
        }
        current = next;
        if stalled > patience {
            current = *visited.choose(&mut rng).expect("non-empty");
            stalled = 0;
        }
    }
    Ok(graph.induced_subgraph(&seen))
}
