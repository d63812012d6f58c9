//! Rooted tree decompositions: greedy elimination-order construction,
//! validation, binarization, sepsets and bag-level edge subgraphs.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use crate::error::{HrgError, Result};
use crate::graph::{Graph, NodeId};

pub type Bag = BTreeSet<NodeId>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeDecomposition {
    bags: Vec<Bag>,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    root: usize,
}

impl TreeDecomposition {
    /// Assembles a decomposition from bags and a parent map. Exactly one bag
    /// must have no parent; whether the parent map is acyclic is left to
    /// [`validate`]. Children are listed in ascending index order.
    pub fn from_parts(bags: Vec<Bag>, parent: Vec<Option<usize>>) -> Result<Self> {
        if bags.is_empty() || bags.len() != parent.len() {
            return Err(HrgError::Argument(format!("{} bags but {} parent entries", bags.len(), parent.len())));
        }
        let mut root = None;
        let mut children = vec![Vec::new(); bags.len()];
        for (i, p) in parent.iter().enumerate() {
            match *p {
                None if root.is_some() => return Err(HrgError::Argument("more than one root bag".into())),
                None => root = Some(i),
                Some(p) if p >= bags.len() || p == i => {
                    return Err(HrgError::Argument(format!("bag {i} has invalid parent {p}")))
                }
                Some(p) => children[p].push(i),
            }
        }
        let root = root.ok_or_else(|| HrgError::Argument("no root bag".into()))?;
        Ok(Self { bags, parent, children, root })
    }

    pub fn len(&self) -> usize {
        self.bags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bags.is_empty()
    }

    pub fn bags(&self) -> &[Bag] {
        &self.bags
    }

    pub fn bag(&self, i: usize) -> &Bag {
        &self.bags[i]
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.parent[i]
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    pub fn root(&self) -> usize {
        self.root
    }

    /// Intersection of a bag with its parent; empty for the root.
    pub fn sepset(&self, i: usize) -> Bag {
        match self.parent[i] {
            None => Bag::new(),
            Some(p) => self.bags[i].intersection(&self.bags[p]).copied().collect(),
        }
    }

    /// Largest bag size minus one.
    pub fn width(&self) -> usize {
        self.bags.iter().map(|b| b.len().saturating_sub(1)).max().unwrap_or(0)
    }

    pub fn max_children(&self) -> usize {
        self.children.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Bags reachable from the root, children before parents.
    pub fn postorder(&self) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.len());
        let mut stack = vec![(self.root, false)];
        let mut seen = vec![false; self.len()];
        while let Some((b, expanded)) = stack.pop() {
            if expanded {
                order.push(b);
                continue;
            }
            if std::mem::replace(&mut seen[b], true) {
                continue;
            }
            stack.push((b, true));
            for &c in self.children[b].iter().rev() {
                stack.push((c, false));
            }
        }
        order
    }

    /// Depth of every bag reachable from the root (`usize::MAX` otherwise).
    pub fn depths(&self) -> Vec<usize> {
        let mut depth = vec![usize::MAX; self.len()];
        depth[self.root] = 0;
        let mut queue = VecDeque::from([self.root]);
        while let Some(b) = queue.pop_front() {
            for &c in &self.children[b] {
                if depth[c] == usize::MAX {
                    depth[c] = depth[b] + 1;
                    queue.push_back(c);
                }
            }
        }
        depth
    }

    /// `bag` together with all of its descendants.
    pub fn subtree(&self, bag: usize) -> BTreeSet<usize> {
        let mut out = BTreeSet::from([bag]);
        let mut stack = vec![bag];
        while let Some(b) = stack.pop() {
            for &c in &self.children[b] {
                if out.insert(c) {
                    stack.push(c);
                }
            }
        }
        out
    }

    /// Debug dump, one line per bag: `<index>: {nodes} parent=<index|none>`.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for (i, bag) in self.bags.iter().enumerate() {
            let nodes: Vec<String> = bag.iter().map(ToString::to_string).collect();
            let parent = self.parent[i].map_or_else(|| "none".to_string(), |p| p.to_string());
            let _ = writeln!(s, "{i}: {{{}}} parent={parent}", nodes.join(", "));
        }
        s
    }
}

/// Outcome of [`validate`]; each field holds the first offender, if any.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidityReport {
    pub node_cover: Option<NodeId>,
    pub edge_cover: Option<(NodeId, NodeId)>,
    pub running_intersection: Option<NodeId>,
    /// First bag not reachable from the root through the parent map.
    pub tree: Option<usize>,
}

impl ValidityReport {
    pub fn is_valid(&self) -> bool {
        self.node_cover.is_none()
            && self.edge_cover.is_none()
            && self.running_intersection.is_none()
            && self.tree.is_none()
    }
}

pub fn validate(td: &TreeDecomposition, graph: &Graph) -> ValidityReport {
    let mut report = ValidityReport::default();

    let mut containing: BTreeMap<NodeId, Vec<usize>> = BTreeMap::new();
    for (i, bag) in td.bags.iter().enumerate() {
        for &v in bag {
            containing.entry(v).or_default().push(i);
        }
    }

    report.node_cover = graph.nodes().find(|v| !containing.contains_key(v));
    report.edge_cover = graph.edges().find(|&(u, v)| !td.bags.iter().any(|b| b.contains(&u) && b.contains(&v)));

    let depths = td.depths();
    report.tree = depths.iter().position(|&d| d == usize::MAX);

    // Undirected tree adjacency so the connectivity check works even when
    // the parent map is malformed.
    let mut adjacent = vec![Vec::new(); td.len()];
    for (i, p) in td.parent.iter().enumerate() {
        if let Some(p) = *p {
            adjacent[i].push(p);
            adjacent[p].push(i);
        }
    }
    report.running_intersection = containing.iter().find_map(|(&v, holders)| {
        let holder_set: BTreeSet<usize> = holders.iter().copied().collect();
        let mut reached = BTreeSet::from([holders[0]]);
        let mut stack = vec![holders[0]];
        while let Some(b) = stack.pop() {
            for &nb in &adjacent[b] {
                if holder_set.contains(&nb) && reached.insert(nb) {
                    stack.push(nb);
                }
            }
        }
        (reached.len() != holder_set.len()).then_some(v)
    });
    report
}

/// Greedy elimination: the lowest-id simplicial vertex if any, else the
/// lowest-id almost-simplicial vertex whose degree does not exceed the width
/// reached so far, else the lowest-id min-fill vertex. Each eliminated
/// vertex contributes its closed neighbourhood as a bag; the parent of a bag
/// is the bag of its earliest-eliminated neighbour. Elimination stops once
/// the remaining vertices form a clique, which becomes the root bag. Bags
/// contained in their parent are then merged into it.
pub fn decompose(graph: &Graph) -> Result<TreeDecomposition> {
    if graph.is_empty() {
        return Err(HrgError::Argument("cannot decompose an empty graph".into()));
    }
    if !graph.is_connected() {
        return Err(HrgError::Argument("cannot decompose a disconnected graph".into()));
    }

    let mut fill: BTreeMap<NodeId, BTreeSet<NodeId>> =
        graph.nodes().map(|v| (v, graph.neighbor_set(v).cloned().unwrap_or_default())).collect();
    let mut width = 0;
    let mut order: Vec<NodeId> = Vec::with_capacity(graph.node_count());
    let mut neighbourhoods: Vec<BTreeSet<NodeId>> = Vec::with_capacity(graph.node_count());

    while !fill.is_empty() {
        let remaining = fill.len();
        if remaining > 1 && fill.values().all(|n| n.len() == remaining - 1) {
            break;
        }
        let v = pick_vertex(&fill, width);
        let nbrs = fill.remove(&v).expect("picked vertex present");
        for u in &nbrs {
            let set = fill.get_mut(u).expect("neighbour present");
            set.remove(&v);
        }
        let list: Vec<NodeId> = nbrs.iter().copied().collect();
        for (i, &a) in list.iter().enumerate() {
            for &b in &list[i + 1..] {
                fill.get_mut(&a).expect("present").insert(b);
                fill.get_mut(&b).expect("present").insert(a);
            }
        }
        width = width.max(nbrs.len());
        order.push(v);
        neighbourhoods.push(nbrs);
    }

    // The final clique becomes the root bag.
    let root = order.len();
    let mut position: BTreeMap<NodeId, usize> = order.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    position.extend(fill.keys().map(|&v| (v, root)));
    let mut bags = Vec::with_capacity(order.len() + 1);
    let mut parent = Vec::with_capacity(order.len() + 1);
    for (v, nbrs) in order.iter().zip(&neighbourhoods) {
        let mut bag = nbrs.clone();
        bag.insert(*v);
        bags.push(bag);
        parent.push(nbrs.iter().map(|u| position[u]).min());
    }
    if !fill.is_empty() {
        bags.push(fill.keys().copied().collect());
        parent.push(None);
    }
    prune_nested(bags, parent)
}

fn pick_vertex(fill: &BTreeMap<NodeId, BTreeSet<NodeId>>, width: usize) -> NodeId {
    let mut missing_of = Vec::with_capacity(fill.len());
    for (&v, nbrs) in fill {
        let list: Vec<NodeId> = nbrs.iter().copied().collect();
        let mut missing = Vec::new();
        for (i, &a) in list.iter().enumerate() {
            for &b in &list[i + 1..] {
                if !fill[&a].contains(&b) {
                    missing.push((a, b));
                }
            }
        }
        if missing.is_empty() {
            return v;
        }
        missing_of.push((v, nbrs.len(), missing));
    }

    for (v, degree, missing) in &missing_of {
        if *degree > width {
            continue;
        }
        let (a, b) = missing[0];
        let almost = [a, b].iter().any(|&u| missing.iter().all(|&(x, y)| x == u || y == u));
        if almost {
            return *v;
        }
    }

    missing_of
        .iter()
        .min_by_key(|(v, _, missing)| (missing.len(), *v))
        .map(|(v, _, _)| *v)
        .expect("non-empty fill graph")
}

/// Merges every bag that is a subset of its parent into the parent, then
/// reindexes preserving relative order.
fn prune_nested(bags: Vec<Bag>, mut parent: Vec<Option<usize>>) -> Result<TreeDecomposition> {
    let mut bags = bags;
    let n = bags.len();
    let mut alive = vec![true; n];
    let mut changed = true;
    while changed {
        changed = false;
        for b in 0..n {
            if !alive[b] {
                continue;
            }
            let Some(p) = parent[b] else { continue };
            if bags[b].is_subset(&bags[p]) {
                for q in parent.iter_mut() {
                    if *q == Some(b) {
                        *q = Some(p);
                    }
                }
                alive[b] = false;
                changed = true;
            }
        }
    }
    let mut new_index = vec![usize::MAX; n];
    let mut kept_bags = Vec::new();
    let mut kept_parent = Vec::new();
    let mut next = 0;
    for b in 0..n {
        if alive[b] {
            new_index[b] = next;
            next += 1;
        }
    }
    for b in 0..n {
        if alive[b] {
            kept_bags.push(std::mem::take(&mut bags[b]));
            kept_parent.push(parent[b].map(|p| new_index[p]));
        }
    }
    TreeDecomposition::from_parts(kept_bags, kept_parent)
}

/// Replaces every bag with `c > 2` children by a chain of `c - 1` copies of
/// itself: copy `k` keeps child `k` and links to copy `k + 1`, the last copy
/// keeps the final two children.
pub fn binarize(td: &TreeDecomposition) -> TreeDecomposition {
    let mut bags = td.bags.clone();
    let mut parent = td.parent.clone();
    for b in 0..td.len() {
        let kids = &td.children[b];
        if kids.len() <= 2 {
            continue;
        }
        let mut holder = b;
        for &child in &kids[1..kids.len() - 1] {
            let copy = bags.len();
            bags.push(td.bags[b].clone());
            parent.push(Some(holder));
            parent[child] = Some(copy);
            holder = copy;
        }
        parent[kids[kids.len() - 1]] = Some(holder);
    }
    TreeDecomposition::from_parts(bags, parent).expect("binarization keeps a single root")
}

/// Edges `{u, v}` all of whose containing bags lie in the subtree rooted at
/// `bag` (and at least one bag contains both endpoints).
pub fn bag_edge_subgraph(td: &TreeDecomposition, graph: &Graph, bag: usize) -> BTreeSet<(NodeId, NodeId)> {
    let subtree = td.subtree(bag);
    graph
        .edges()
        .filter(|&(u, v)| {
            let mut holders =
                td.bags.iter().enumerate().filter(|(_, b)| b.contains(&u) && b.contains(&v)).map(|(i, _)| i).peekable();
            holders.peek().is_some() && holders.all(|i| subtree.contains(&i))
        })
        .collect()
}

/// For each graph edge, the shallowest bag containing both endpoints. By
/// running intersection that bag is unique, and an edge belongs to `H_b`
/// exactly when its owner lies in the subtree of `b`.
pub fn edge_owners(td: &TreeDecomposition, graph: &Graph) -> BTreeMap<(NodeId, NodeId), usize> {
    let depths = td.depths();
    let mut owners: BTreeMap<(NodeId, NodeId), usize> = BTreeMap::new();
    for (i, bag) in td.bags.iter().enumerate() {
        let list: Vec<NodeId> = bag.iter().copied().collect();
        for (k, &u) in list.iter().enumerate() {
            for &v in &list[k + 1..] {
                if !graph.has_edge(u, v) {
                    continue;
                }
                owners
                    .entry((u, v))
                    .and_modify(|o| {
                        if (depths[i], i) < (depths[*o], *o) {
                            *o = i;
                        }
                    })
                    .or_insert(i);
            }
        }
    }
    owners
}
