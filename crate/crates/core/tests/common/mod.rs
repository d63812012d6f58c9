//! Independent oracles and fixtures shared by the integration tests.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashSet};

use hrg_core::grammar::Derivation;
use hrg_core::graph::{Graph, NodeId};
use hrg_core::latent::SubruleTables;
use hrg_core::treedecomp::{Bag, TreeDecomposition};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn bag(nodes: &[NodeId]) -> Bag {
    nodes.iter().copied().collect()
}

/// Seven-node example graph with a hand-built width-3 decomposition:
/// bags {0,3,4,5} (root), {0,4,6}, {2,3,4,5}, {1,2,5}.
pub fn example_graph() -> Graph {
    Graph::from_edges([(0, 3), (0, 4), (3, 4), (3, 5), (4, 5), (0, 6), (4, 6), (2, 3), (2, 4), (1, 2), (1, 5)])
}

pub fn example_decomposition() -> TreeDecomposition {
    TreeDecomposition::from_parts(
        vec![bag(&[0, 3, 4, 5]), bag(&[0, 4, 6]), bag(&[2, 3, 4, 5]), bag(&[1, 2, 5])],
        vec![None, Some(0), Some(0), Some(2)],
    )
    .unwrap()
}

/// Random connected graph: a random spanning tree plus extra edges.
pub fn random_connected(rng: &mut ChaCha8Rng, nodes: usize, extra_p: f64) -> Graph {
    let mut g = Graph::new();
    g.add_node(0);
    for v in 1..nodes as NodeId {
        let u = rng.gen_range(0..v);
        g.add_edge(u, v);
    }
    for u in 0..nodes as NodeId {
        for v in u + 1..nodes as NodeId {
            if rng.gen_bool(extra_p) {
                g.add_edge(u, v);
            }
        }
    }
    g
}

/// G(n, p); isolated nodes kept.
pub fn random_gnp(rng: &mut ChaCha8Rng, nodes: usize, p: f64) -> Graph {
    let mut g = Graph::new();
    for u in 0..nodes as NodeId {
        g.add_node(u);
        for v in 0..u {
            if rng.gen_bool(p) {
                g.add_edge(u, v);
            }
        }
    }
    g
}

/// Graph invariants checked from the outside.
pub fn well_formed(g: &Graph) -> bool {
    let mut edges = 0;
    for u in g.nodes() {
        for v in g.neighbors(u) {
            if u == v || !g.contains_node(v) || !g.neighbors(v).any(|w| w == u) {
                return false;
            }
            edges += 1;
        }
    }
    edges == 2 * g.edge_count()
}

// ---------------------------------------------------------------------------
// Exhaustive derivation enumeration

pub struct BruteChart {
    pub likelihood: f64,
    pub inside: Vec<Vec<f64>>,
    pub outside: Vec<Vec<f64>>,
    pub counts: Vec<Vec<f64>>,
}

fn subtree(d: &Derivation, b: usize, out: &mut Vec<usize>) {
    out.push(b);
    for &c in &d.bags[b].children {
        subtree(d, c, out);
    }
}

/// Sums over every assignment of subsymbols to bags, in linear space.
pub fn brute_chart(d: &Derivation, t: &SubruleTables) -> BruteChart {
    let skel = t.bind(d).unwrap();
    let dims: Vec<usize> = skel.iter().map(|&s| t.lhs_dim(s)).collect();
    let total: usize = dims.iter().product();
    let subtrees: Vec<BTreeSet<usize>> = (0..d.len())
        .map(|b| {
            let mut v = Vec::new();
            subtree(d, b, &mut v);
            v.into_iter().collect()
        })
        .collect();
    let factor = |a: &[usize], b: usize| -> (usize, f64) {
        let mut flat = a[b];
        for (c, &dim) in d.bags[b].children.iter().zip(t.child_dims(skel[b])) {
            flat = flat * dim + a[*c];
        }
        (flat, t.log_probs(skel[b])[flat].exp())
    };
    let mut inside: Vec<Vec<f64>> = dims.iter().map(|&k| vec![0.0; k]).collect();
    let mut outside = inside.clone();
    let mut counts: Vec<Vec<f64>> = (0..t.len()).map(|s| vec![0.0; t.log_probs(s).len()]).collect();
    let mut likelihood = 0.0;
    let mut assignment = vec![0usize; d.len()];
    for mut code in 0..total {
        for (a, &k) in assignment.iter_mut().zip(&dims) {
            *a = code % k;
            code /= k;
        }
        let factors: Vec<(usize, f64)> = (0..d.len()).map(|b| factor(&assignment, b)).collect();
        let w: f64 = factors.iter().map(|f| f.1).product();
        likelihood += w;
        for b in 0..d.len() {
            let within: f64 = subtrees[b].iter().map(|&c| factors[c].1).product();
            let free_outside: usize = (0..d.len()).filter(|c| !subtrees[b].contains(c)).map(|c| dims[c]).product();
            inside[b][assignment[b]] += within / free_outside as f64;
            let without: f64 = (0..d.len()).filter(|c| !subtrees[b].contains(c)).map(|c| factors[c].1).product();
            let free_inside: usize = subtrees[b].iter().filter(|&&c| c != b).map(|&c| dims[c]).product();
            outside[b][assignment[b]] += without / free_inside as f64;
            counts[skel[b]][factors[b].0] += w;
        }
    }
    for c in counts.iter_mut().flatten() {
        *c /= likelihood;
    }
    BruteChart { likelihood, inside, outside, counts }
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()) || (a == 0.0 && b == 0.0)
}

// ---------------------------------------------------------------------------
// Brute-force graphlet orbits

type Template = (usize, Vec<(usize, usize)>, Vec<usize>);

/// Graphlet templates on nodes 0..k with the orbit of each node.
fn templates() -> Vec<Template> {
    vec![
        (2, vec![(0, 1)], vec![0, 0]),
        (3, vec![(0, 1), (1, 2)], vec![1, 2, 1]),
        (3, vec![(0, 1), (1, 2), (0, 2)], vec![3, 3, 3]),
        (4, vec![(0, 1), (1, 2), (2, 3)], vec![4, 5, 5, 4]),
        (4, vec![(0, 1), (0, 2), (0, 3)], vec![7, 6, 6, 6]),
        (4, vec![(0, 1), (1, 2), (2, 3), (0, 3)], vec![8, 8, 8, 8]),
        (4, vec![(0, 1), (1, 2), (0, 2), (2, 3)], vec![10, 10, 11, 9]),
        (4, vec![(0, 1), (1, 2), (2, 3), (0, 3), (1, 3)], vec![12, 13, 12, 13]),
        (4, vec![(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)], vec![14, 14, 14, 14]),
    ]
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, k - 1);
            out.push(q);
        }
    }
    out
}

fn combinations(items: &[NodeId], k: usize) -> Vec<Vec<NodeId>> {
    if k == 0 {
        return vec![vec![]];
    }
    if items.len() < k {
        return vec![];
    }
    let mut with: Vec<Vec<NodeId>> = combinations(&items[1..], k - 1)
        .into_iter()
        .map(|mut c| {
            c.insert(0, items[0]);
            c
        })
        .collect();
    with.extend(combinations(&items[1..], k));
    with
}

/// Per-node counts of all 15 orbits, by testing every 2-, 3- and 4-subset
/// against every template under every node bijection.
pub fn brute_orbits(g: &Graph) -> BTreeMap<NodeId, [u64; 15]> {
    let nodes: Vec<NodeId> = g.nodes().collect();
    let mut out: BTreeMap<NodeId, [u64; 15]> = nodes.iter().map(|&v| (v, [0; 15])).collect();
    let templates = templates();
    for k in 2..=4 {
        let perms = permutations(k);
        for subset in combinations(&nodes, k) {
            let edges: BTreeSet<(usize, usize)> = (0..k)
                .flat_map(|i| (i + 1..k).map(move |j| (i, j)))
                .filter(|&(i, j)| g.has_edge(subset[i], subset[j]))
                .collect();
            'templates: for (size, t_edges, orbits) in templates.iter().filter(|t| t.0 == k) {
                debug_assert_eq!(*size, k);
                for p in &perms {
                    let mapped: BTreeSet<(usize, usize)> =
                        t_edges.iter().map(|&(a, b)| (p[a].min(p[b]), p[a].max(p[b]))).collect();
                    if mapped == edges {
                        for (tv, &orbit) in orbits.iter().enumerate() {
                            out.get_mut(&subset[p[tv]]).unwrap()[orbit] += 1;
                        }
                        break 'templates;
                    }
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Small graphs up to isomorphism

/// Adjacency as a bitmask over pairs `(i, j)`, `i < j < n`.
fn pair_bit(i: usize, j: usize) -> u64 {
    let (i, j) = (i.min(j), i.max(j));
    1 << (j * (j - 1) / 2 + i)
}

fn has(mask: u64, i: usize, j: usize) -> bool {
    mask & pair_bit(i, j) != 0
}

/// Canonical certificate: minimum relabelled mask over orderings that
/// respect an isomorphism-invariant vertex key.
fn certificate(n: usize, mask: u64) -> u64 {
    let degree = |v: usize| (0..n).filter(|&u| u != v && has(mask, u, v)).count();
    let key = |v: usize| {
        let mut nd: Vec<usize> = (0..n).filter(|&u| u != v && has(mask, u, v)).map(degree).collect();
        nd.sort_unstable();
        (degree(v), nd)
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&v| key(v));
    let mut cells: Vec<Vec<usize>> = Vec::new();
    for &v in &order {
        match cells.last_mut() {
            Some(c) if key(c[0]) == key(v) => c.push(v),
            _ => cells.push(vec![v]),
        }
    }
    let mut best = u64::MAX;
    let cell_perms: Vec<Vec<Vec<usize>>> = cells.iter().map(|c| permutations(c.len())).collect();
    let mut idx = vec![0usize; cells.len()];
    loop {
        let labelled: Vec<usize> = cells
            .iter()
            .zip(&idx)
            .zip(&cell_perms)
            .flat_map(|((c, &i), ps)| ps[i].iter().map(move |&k| c[k]))
            .collect();
        let mut pos = vec![0; n];
        for (p, &v) in labelled.iter().enumerate() {
            pos[v] = p;
        }
        let mut m = 0;
        for i in 0..n {
            for j in i + 1..n {
                if has(mask, i, j) {
                    m |= pair_bit(pos[i], pos[j]);
                }
            }
        }
        best = best.min(m);
        let mut k = 0;
        loop {
            if k == idx.len() {
                return best;
            }
            idx[k] += 1;
            if idx[k] < cell_perms[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// One representative mask per isomorphism class on `n` nodes.
pub fn graph_classes(n: usize) -> Vec<u64> {
    let mut level = vec![0u64];
    for k in 1..n {
        let mut seen = HashSet::new();
        let mut next = Vec::new();
        for &m in &level {
            for s in 0..1u64 << k {
                let mut mm = m;
                for i in 0..k {
                    if s >> i & 1 == 1 {
                        mm |= pair_bit(i, k);
                    }
                }
                if seen.insert(certificate(k + 1, mm)) {
                    next.push(mm);
                }
            }
        }
        level = next;
    }
    level
}

/// Every graph on `n` nodes up to isomorphism appears at least once (some
/// more than once): classes on `n - 1` nodes extended by one vertex in all
/// possible ways.
pub fn graph_cover(n: usize) -> Vec<u64> {
    let k = n - 1;
    let mut out = Vec::new();
    for &m in &graph_classes(k) {
        for s in 0..1u64 << k {
            let mut mm = m;
            for i in 0..k {
                if s >> i & 1 == 1 {
                    mm |= pair_bit(i, k);
                }
            }
            out.push(mm);
        }
    }
    out
}

pub fn mask_graph(n: usize, mask: u64) -> Graph {
    let mut g = Graph::new();
    for i in 0..n {
        g.add_node(i as NodeId);
        for j in 0..i {
            if has(mask, i, j) {
                g.add_edge(i as NodeId, j as NodeId);
            }
        }
    }
    g
}
