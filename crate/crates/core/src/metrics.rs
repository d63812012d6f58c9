//! Degree distribution distance and graphlet correlation distance.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{HrgError, Result};
use crate::graph::{Graph, NodeId};

/// Number of automorphism orbits over connected graphlets with 2 to 4 nodes.
pub const ORBITS: usize = 15;

/// Non-redundant orbits used for the correlation matrix.
pub const GCD_ORBITS: [usize; 11] = [0, 1, 2, 4, 5, 6, 7, 8, 9, 10, 11];

/// `N(k) = (d(k) / k) / T` for every degree `k >= 1` present.
pub fn normalized_degree_distribution(graph: &Graph) -> BTreeMap<usize, f64> {
    let mut scaled: BTreeMap<usize, f64> = BTreeMap::new();
    for v in graph.nodes() {
        let k = graph.degree(v);
        if k > 0 {
            *scaled.entry(k).or_insert(0.0) += 1.0;
        }
    }
    for (k, s) in scaled.iter_mut() {
        *s /= *k as f64;
    }
    let total: f64 = scaled.values().sum();
    scaled.values_mut().for_each(|s| *s /= total);
    scaled
}

pub fn degree_distance(g1: &Graph, g2: &Graph) -> Result<f64> {
    if g1.edge_count() == 0 || g2.edge_count() == 0 {
        return Err(HrgError::Argument("degree distance needs graphs with at least one edge".into()));
    }
    let a = normalized_degree_distribution(g1);
    let b = normalized_degree_distribution(g2);
    let support: BTreeSet<usize> = a.keys().chain(b.keys()).copied().collect();
    let sum: f64 = support.iter().map(|k| (a.get(k).unwrap_or(&0.0) - b.get(k).unwrap_or(&0.0)).powi(2)).sum();
    Ok((sum / 2.0).sqrt())
}

/// Per-node orbit counts, rows in ascending node order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OrbitCountMatrix {
    pub nodes: Vec<NodeId>,
    pub counts: Vec<[u64; ORBITS]>,
}

impl OrbitCountMatrix {
    pub fn row(&self, v: NodeId) -> Option<&[u64; ORBITS]> {
        self.nodes.binary_search(&v).ok().map(|i| &self.counts[i])
    }

    pub fn column(&self, orbit: usize) -> Vec<u64> {
        self.counts.iter().map(|r| r[orbit]).collect()
    }
}

/// Orbit of each member of a connected graphlet, from its in-graphlet
/// degrees (which determine the orbit for graphlets of at most 4 nodes).
pub fn classify(degrees: &[usize]) -> Vec<usize> {
    let edges: usize = degrees.iter().sum::<usize>() / 2;
    let max = degrees.iter().copied().max().unwrap_or(0);
    degrees
        .iter()
        .map(|&d| match (degrees.len(), edges) {
            (2, _) => 0,
            (3, 2) => {
                if d == 1 {
                    1
                } else {
                    2
                }
            }
            (3, _) => 3,
            (4, 3) if max == 3 => {
                if d == 3 {
                    7
                } else {
                    6
                }
            }
            (4, 3) => {
                if d == 1 {
                    4
                } else {
                    5
                }
            }
            (4, 4) if max == 3 => match d {
                1 => 9,
                2 => 10,
                _ => 11,
            },
            (4, 4) => 8,
            (4, 5) => {
                if d == 2 {
                    12
                } else {
                    13
                }
            }
            _ => 14,
        })
        .collect()
}

/// Counts orbits by enumerating every connected induced subgraph on 2 to 4
/// nodes exactly once (extension-set enumeration).
pub fn orbit_counts(graph: &Graph) -> OrbitCountMatrix {
    let nodes: Vec<NodeId> = graph.nodes().collect();
    let index: BTreeMap<NodeId, usize> = nodes.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let mut counts = vec![[0u64; ORBITS]; nodes.len()];

    let mut record = |sub: &[NodeId]| {
        let degrees: Vec<usize> = sub.iter().map(|&u| sub.iter().filter(|&&w| graph.has_edge(u, w)).count()).collect();
        for (&u, orbit) in sub.iter().zip(classify(&degrees)) {
            counts[index[&u]][orbit] += 1;
        }
    };

    fn extend(
        graph: &Graph,
        root: NodeId,
        sub: &mut Vec<NodeId>,
        mut ext: Vec<NodeId>,
        record: &mut dyn FnMut(&[NodeId]),
    ) {
        if sub.len() > 1 {
            record(sub);
        }
        if sub.len() == 4 {
            return;
        }
        while let Some(w) = ext.pop() {
            let mut next = ext.clone();
            for u in graph.neighbors(w) {
                let exclusive = u > root
                    && !sub.contains(&u)
                    && !ext.contains(&u)
                    && u != w
                    && !sub.iter().any(|&s| graph.has_edge(s, u));
                if exclusive && !next.contains(&u) {
                    next.push(u);
                }
            }
            sub.push(w);
            extend(graph, root, sub, next, record);
            sub.pop();
        }
    }

    for &v in &nodes {
        let ext: Vec<NodeId> = graph.neighbors(v).filter(|&u| u > v).collect();
        extend(graph, v, &mut vec![v], ext, &mut record);
    }
    OrbitCountMatrix { nodes, counts }
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman correlation; 0 when either input is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// 11 x 11 Spearman correlation matrix over the [`GCD_ORBITS`] columns.
pub fn graphlet_correlation_matrix(graph: &Graph) -> Vec<Vec<f64>> {
    let m = orbit_counts(graph);
    let cols: Vec<Vec<f64>> = GCD_ORBITS.iter().map(|&o| m.column(o).into_iter().map(|c| c as f64).collect()).collect();
    let k = cols.len();
    let mut out = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in i..k {
            let r = if i == j && cols[i].iter().any(|&c| c != cols[i][0]) { 1.0 } else { spearman(&cols[i], &cols[j]) };
            out[i][j] = r;
            out[j][i] = r;
        }
    }
    out
}

pub fn gcd(g1: &Graph, g2: &Graph) -> Result<f64> {
    if g1.node_count() < 2 || g2.node_count() < 2 {
        return Err(HrgError::Argument("GCD needs graphs with at least two nodes".into()));
    }
    let a = graphlet_correlation_matrix(g1);
    let b = graphlet_correlation_matrix(g2);
    let mut sum = 0.0;
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            sum += (a[i][j] - b[i][j]).powi(2);
        }
    }
    Ok(sum.sqrt())
}

/// `metric<TAB>value` rows.
pub fn metrics_tsv(rows: &[(&str, f64)]) -> String {
    rows.iter().map(|(m, v)| format!("{m}\t{v}\n")).collect()
}
