//! HRG production rules extracted from rooted tree decompositions.
//!
//! Every bag yields one rule `N^k -> R`: `k` is the size of the bag's sepset,
//! `R` holds the bag's nodes (sepset nodes external), the edges owned by the
//! bag as terminal edges, and one nonterminal hyperedge per child attached to
//! that child's sepset. Right-hand sides are stored in a canonical encoding so
//! that isomorphic fragments compare equal.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use crate::error::{HrgError, Result};
use crate::graph::{Graph, NodeId};
use crate::treedecomp::{edge_owners, TreeDecomposition};

/// `N^arity_subsymbol`. Subsymbols are 1-based; `N^0_1` is the start symbol.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Nonterminal {
    pub arity: usize,
    pub subsymbol: u32,
}

impl Nonterminal {
    pub fn new(arity: usize, subsymbol: u32) -> Self {
        Self { arity, subsymbol }
    }

    pub fn unsplit(arity: usize) -> Self {
        Self::new(arity, 1)
    }

    pub fn start() -> Self {
        Self::new(0, 1)
    }

    pub fn is_start(&self) -> bool {
        self.arity == 0
    }
}

impl fmt::Display for Nonterminal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "N^{}_{}", self.arity, self.subsymbol)
    }
}

impl FromStr for Nonterminal {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let body = s.strip_prefix("N^").ok_or_else(|| format!("bad nonterminal {s:?}"))?;
        let (arity, sub) = body.split_once('_').ok_or_else(|| format!("bad nonterminal {s:?}"))?;
        Ok(Self::new(
            arity.parse().map_err(|e| format!("bad arity in {s:?}: {e}"))?,
            sub.parse().map_err(|e| format!("bad subsymbol in {s:?}: {e}"))?,
        ))
    }
}

/// A labeled hyperedge attached to a set of RHS positions.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NonterminalEdge {
    pub label: Nonterminal,
    pub attachments: Vec<usize>,
}

/// Hypergraph fragment on positions `0..node_count`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RuleRhs {
    pub node_count: usize,
    pub external: Vec<usize>,
    pub terminal_edges: Vec<(usize, usize)>,
    pub nonterminal_edges: Vec<NonterminalEdge>,
}

impl RuleRhs {
    pub fn arity(&self) -> usize {
        self.external.len()
    }

    pub fn nonterminal_count(&self) -> usize {
        self.nonterminal_edges.len()
    }

    /// The same fragment with every nonterminal reset to subsymbol 1.
    pub fn shape(&self) -> RuleRhs {
        let mut s = self.clone();
        for e in &mut s.nonterminal_edges {
            e.label.subsymbol = 1;
        }
        s
    }

    /// Relabels nonterminal edges, in order, with the given subsymbols.
    pub fn with_subsymbols(&self, subs: &[u32]) -> RuleRhs {
        debug_assert_eq!(subs.len(), self.nonterminal_edges.len());
        let mut s = self.clone();
        for (e, &sub) in s.nonterminal_edges.iter_mut().zip(subs) {
            e.label.subsymbol = sub;
        }
        s
    }

    pub fn subsymbols(&self) -> Vec<u32> {
        self.nonterminal_edges.iter().map(|e| e.label.subsymbol).collect()
    }

    fn check(&self) -> std::result::Result<(), String> {
        let in_range = |p: usize| p < self.node_count;
        if !self.external.iter().all(|&p| in_range(p)) {
            return Err("external position out of range".into());
        }
        for &(a, b) in &self.terminal_edges {
            if a == b || !in_range(a) || !in_range(b) {
                return Err(format!("bad terminal edge {a}-{b}"));
            }
        }
        for e in &self.nonterminal_edges {
            if e.attachments.len() != e.label.arity || !e.attachments.iter().all(|&p| in_range(p)) {
                return Err(format!("bad nonterminal edge {:?}", e));
            }
        }
        Ok(())
    }
}

impl fmt::Display for RuleRhs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: &[usize]| v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
        let terminals: Vec<String> = self.terminal_edges.iter().map(|(a, b)| format!("{a}-{b}")).collect();
        let nts: Vec<String> = self
            .nonterminal_edges
            .iter()
            .map(|e| format!("{}_{}:({})", e.label.arity, e.label.subsymbol, join(&e.attachments)))
            .collect();
        write!(
            f,
            "nodes={} ext={} T={} NT={}",
            self.node_count,
            join(&self.external),
            terminals.join(";"),
            nts.join("|")
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rule {
    pub lhs: Nonterminal,
    pub rhs: RuleRhs,
    pub weight: f64,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -> {} w={}", self.lhs, self.rhs, format_weight(self.weight))
    }
}

fn format_weight(w: f64) -> String {
    if w == 0.0 || (1e-4..1e15).contains(&w.abs()) {
        format!("{w}")
    } else {
        format!("{w:e}")
    }
}

impl FromStr for Rule {
    type Err = String;

    fn from_str(line: &str) -> std::result::Result<Self, Self::Err> {
        let (lhs, rest) = line.split_once("->").ok_or("missing '->'")?;
        let lhs: Nonterminal = lhs.trim().parse()?;
        let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
        for tok in rest.split_whitespace() {
            let (k, v) = tok.split_once('=').ok_or_else(|| format!("bad field {tok:?}"))?;
            fields.insert(k, v);
        }
        let field = |k: &str| fields.get(k).copied().ok_or_else(|| format!("missing field {k}"));
        let positions = |s: &str| -> std::result::Result<Vec<usize>, String> {
            if s.is_empty() {
                return Ok(Vec::new());
            }
            s.split(',').map(|p| p.parse::<usize>().map_err(|e| format!("bad position {p:?}: {e}"))).collect()
        };
        let node_count = field("nodes")?.parse::<usize>().map_err(|e| format!("bad nodes: {e}"))?;
        let external = positions(field("ext")?)?;
        let mut terminal_edges = Vec::new();
        let t = field("T")?;
        if !t.is_empty() {
            for pair in t.split(';') {
                let (a, b) = pair.split_once('-').ok_or_else(|| format!("bad edge {pair:?}"))?;
                terminal_edges.push((
                    a.parse().map_err(|e| format!("bad edge {pair:?}: {e}"))?,
                    b.parse().map_err(|e| format!("bad edge {pair:?}: {e}"))?,
                ));
            }
        }
        let mut nonterminal_edges = Vec::new();
        let nt = field("NT")?;
        if !nt.is_empty() {
            for item in nt.split('|') {
                let (label, att) = item.split_once(':').ok_or_else(|| format!("bad hyperedge {item:?}"))?;
                let label: Nonterminal = format!("N^{label}").parse()?;
                let att = att
                    .strip_prefix('(')
                    .and_then(|a| a.strip_suffix(')'))
                    .ok_or_else(|| format!("bad attachment list {att:?}"))?;
                nonterminal_edges.push(NonterminalEdge { label, attachments: positions(att)? });
            }
        }
        let weight = field("w")?.parse::<f64>().map_err(|e| format!("bad weight: {e}"))?;
        let rhs = RuleRhs { node_count, external, terminal_edges, nonterminal_edges };
        rhs.check()?;
        if rhs.arity() != lhs.arity {
            return Err(format!("lhs arity {} but {} external nodes", lhs.arity, rhs.arity()));
        }
        Ok(Rule { lhs, rhs, weight })
    }
}

/// Canonical form of a fragment plus how it was reached.
#[derive(Clone, Debug)]
pub struct Canonical {
    pub rhs: RuleRhs,
    /// `position_map[old] = new`.
    pub position_map: Vec<usize>,
    /// `nt_order[new_index] = old_index` for the nonterminal edges.
    pub nt_order: Vec<usize>,
}

/// Minimal encoding over all node permutations that keep external nodes
/// external. Externals take positions `0..k`; terminal edges are sorted
/// `(low, high)` pairs; nonterminal edges are sorted by arity, attachments
/// and subsymbol.
pub fn canonicalize(rhs: &RuleRhs) -> RuleRhs {
    canonical_form(rhs).rhs
}

type Encoding = (Vec<(usize, usize)>, Vec<(usize, Vec<usize>, u32)>);

pub fn canonical_form(rhs: &RuleRhs) -> Canonical {
    let m = rhs.node_count;
    let cells = refined_cells(rhs);
    let reference = encode(rhs, &(0..m).collect::<Vec<_>>());

    // Nodes whose transposition is an automorphism are interchangeable, so
    // each cell is searched as a multiset of twin classes.
    let mut classes: Vec<Vec<Vec<usize>>> = Vec::with_capacity(cells.len());
    let mut arrangement: Vec<Vec<usize>> = Vec::with_capacity(cells.len());
    for cell in &cells {
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for &p in cell {
            match groups.iter_mut().find(|g| is_twin(rhs, &reference, g[0], p)) {
                Some(g) => g.push(p),
                None => groups.push(vec![p]),
            }
        }
        arrangement.push(groups.iter().enumerate().flat_map(|(i, g)| std::iter::repeat_n(i, g.len())).collect());
        classes.push(groups);
    }

    let mut best: Option<(Encoding, Vec<usize>)> = None;
    let mut map = vec![0; m];
    let mut used = Vec::new();
    loop {
        let mut next = 0;
        for (labels, groups) in arrangement.iter().zip(&classes) {
            used.clear();
            used.resize(groups.len(), 0);
            for &l in labels {
                map[groups[l][used[l]]] = next;
                used[l] += 1;
                next += 1;
            }
        }
        let enc = encode(rhs, &map);
        if best.as_ref().is_none_or(|(b, _)| enc < *b) {
            best = Some((enc, map.clone()));
        }
        // odometer over per-cell permutations, last cell fastest
        let mut advanced = false;
        for cell in arrangement.iter_mut().rev() {
            if next_permutation(cell) {
                advanced = true;
                break;
            }
        }
        if !advanced {
            break;
        }
    }
    let (_, position_map) = best.expect("at least one arrangement");
    build_canonical(rhs, position_map)
}

fn is_twin(rhs: &RuleRhs, reference: &Encoding, p: usize, q: usize) -> bool {
    let mut swap: Vec<usize> = (0..rhs.node_count).collect();
    swap.swap(p, q);
    encode(rhs, &swap) == *reference
}

fn build_canonical(rhs: &RuleRhs, position_map: Vec<usize>) -> Canonical {
    let mut external: Vec<usize> = rhs.external.iter().map(|&p| position_map[p]).collect();
    external.sort_unstable();
    let mut terminal_edges: Vec<(usize, usize)> = rhs
        .terminal_edges
        .iter()
        .map(|&(a, b)| {
            let (a, b) = (position_map[a], position_map[b]);
            (a.min(b), a.max(b))
        })
        .collect();
    terminal_edges.sort_unstable();
    terminal_edges.dedup();
    let mapped: Vec<NonterminalEdge> = rhs
        .nonterminal_edges
        .iter()
        .map(|e| {
            let mut attachments: Vec<usize> = e.attachments.iter().map(|&p| position_map[p]).collect();
            attachments.sort_unstable();
            NonterminalEdge { label: e.label, attachments }
        })
        .collect();
    let mut nt_order: Vec<usize> = (0..mapped.len()).collect();
    nt_order.sort_by(|&a, &b| nt_key(&mapped[a]).cmp(&nt_key(&mapped[b])).then(a.cmp(&b)));
    let nonterminal_edges = nt_order.iter().map(|&i| mapped[i].clone()).collect();
    Canonical {
        rhs: RuleRhs { node_count: rhs.node_count, external, terminal_edges, nonterminal_edges },
        position_map,
        nt_order,
    }
}

fn nt_key(e: &NonterminalEdge) -> (usize, &[usize], u32) {
    (e.label.arity, &e.attachments, e.label.subsymbol)
}

fn encode(rhs: &RuleRhs, map: &[usize]) -> Encoding {
    let mut t: Vec<(usize, usize)> = rhs
        .terminal_edges
        .iter()
        .map(|&(a, b)| {
            let (a, b) = (map[a], map[b]);
            (a.min(b), a.max(b))
        })
        .collect();
    t.sort_unstable();
    let mut nt: Vec<(usize, Vec<usize>, u32)> = rhs
        .nonterminal_edges
        .iter()
        .map(|e| {
            let mut att: Vec<usize> = e.attachments.iter().map(|&p| map[p]).collect();
            att.sort_unstable();
            (e.label.arity, att, e.label.subsymbol)
        })
        .collect();
    nt.sort_unstable();
    (t, nt)
}

type SeedKey = (usize, usize, Vec<(usize, u32)>);
type RefineKey = (usize, Vec<usize>, Vec<(usize, u32, Vec<usize>)>);

/// Colour refinement seeded with (internal?, degree, incident hyperedge
/// labels). Cells come out in colour order, externals first; only
/// permutations inside a cell need to be searched.
fn refined_cells(rhs: &RuleRhs) -> Vec<Vec<usize>> {
    let m = rhs.node_count;
    let external: BTreeSet<usize> = rhs.external.iter().copied().collect();
    let mut adj = vec![Vec::new(); m];
    for &(a, b) in &rhs.terminal_edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut incident = vec![Vec::new(); m];
    for (i, e) in rhs.nonterminal_edges.iter().enumerate() {
        for &p in &e.attachments {
            incident[p].push(i);
        }
    }

    let initial: Vec<SeedKey> = (0..m)
        .map(|p| {
            let mut labels: Vec<(usize, u32)> = incident[p]
                .iter()
                .map(|&i| (rhs.nonterminal_edges[i].label.arity, rhs.nonterminal_edges[i].label.subsymbol))
                .collect();
            labels.sort_unstable();
            (usize::from(!external.contains(&p)), adj[p].len(), labels)
        })
        .collect();
    let mut colour = rank(&initial);
    let mut distinct = colour.iter().collect::<BTreeSet<_>>().len();

    loop {
        let keys: Vec<RefineKey> = (0..m)
            .map(|p| {
                let mut nbr: Vec<usize> = adj[p].iter().map(|&q| colour[q]).collect();
                nbr.sort_unstable();
                let mut hyper: Vec<(usize, u32, Vec<usize>)> = incident[p]
                    .iter()
                    .map(|&i| {
                        let e = &rhs.nonterminal_edges[i];
                        let mut cols: Vec<usize> = e.attachments.iter().map(|&q| colour[q]).collect();
                        cols.sort_unstable();
                        (e.label.arity, e.label.subsymbol, cols)
                    })
                    .collect();
                hyper.sort_unstable();
                (colour[p], nbr, hyper)
            })
            .collect();
        let next = rank(&keys);
        let count = next.iter().collect::<BTreeSet<_>>().len();
        colour = next;
        if count == distinct {
            break;
        }
        distinct = count;
    }

    let mut cells: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (p, &c) in colour.iter().enumerate() {
        cells.entry(c).or_default().push(p);
    }
    cells.into_values().collect()
}

fn rank<K: Ord>(keys: &[K]) -> Vec<usize> {
    let sorted: BTreeSet<&K> = keys.iter().collect();
    let index: BTreeMap<&K, usize> = sorted.into_iter().enumerate().map(|(i, k)| (k, i)).collect();
    keys.iter().map(|k| index[k]).collect()
}

/// Lexicographic successor; returns `false` (and restores ascending order)
/// after the last permutation.
fn next_permutation(v: &mut [usize]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        v.reverse();
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

/// The rule induced by one bag, with the bookkeeping needed to walk the
/// decomposition: `children[k]` is the bag derived by nonterminal edge `k`,
/// `nodes[p]` the graph node at position `p`.
#[derive(Clone, Debug, PartialEq)]
pub struct BagRule {
    pub lhs_arity: usize,
    pub rhs: RuleRhs,
    pub children: Vec<usize>,
    pub nodes: Vec<NodeId>,
}

impl BagRule {
    pub fn lhs(&self) -> Nonterminal {
        Nonterminal::unsplit(self.lhs_arity)
    }
}

/// A decomposition rewritten as a derivation tree of canonical rules.
#[derive(Clone, Debug, PartialEq)]
pub struct Derivation {
    pub bags: Vec<BagRule>,
    pub root: usize,
    /// Children before parents.
    pub postorder: Vec<usize>,
}

impl Derivation {
    /// Extracts one rule per bag. `td` must be a valid rooted decomposition
    /// of `graph`; it need not be binary.
    pub fn extract(graph: &Graph, td: &TreeDecomposition) -> Self {
        let owners = edge_owners(td, graph);
        let mut owned: Vec<Vec<(NodeId, NodeId)>> = vec![Vec::new(); td.len()];
        for (edge, bag) in owners {
            owned[bag].push(edge);
        }
        let bags = (0..td.len()).map(|b| bag_rule(td, b, &owned[b])).collect();
        Self { bags, root: td.root(), postorder: td.postorder() }
    }

    pub fn len(&self) -> usize {
        self.bags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bags.is_empty()
    }

    /// Rebuilds the graph by replaying the rules top-down, fusing each
    /// child's external nodes with the parent's attachment nodes through the
    /// recorded node identities.
    pub fn replay(&self) -> Graph {
        let mut g = Graph::new();
        for rule in &self.bags {
            for &v in &rule.nodes {
                g.add_node(v);
            }
            for &(a, b) in &rule.rhs.terminal_edges {
                g.add_edge(rule.nodes[a], rule.nodes[b]);
            }
        }
        g
    }
}

fn bag_rule(td: &TreeDecomposition, b: usize, owned: &[(NodeId, NodeId)]) -> BagRule {
    let nodes: Vec<NodeId> = td.bag(b).iter().copied().collect();
    let pos = |v: NodeId| nodes.binary_search(&v).expect("node in bag");
    let sepset = td.sepset(b);
    let raw = RuleRhs {
        node_count: nodes.len(),
        external: sepset.iter().map(|&v| pos(v)).collect(),
        terminal_edges: owned.iter().map(|&(u, v)| (pos(u), pos(v))).collect(),
        nonterminal_edges: td
            .children(b)
            .iter()
            .map(|&c| {
                let sep = td.sepset(c);
                NonterminalEdge {
                    label: Nonterminal::unsplit(sep.len()),
                    attachments: sep.iter().map(|&v| pos(v)).collect(),
                }
            })
            .collect(),
    };
    let canon = canonical_form(&raw);
    let mut canon_nodes = vec![0; nodes.len()];
    for (old, &new) in canon.position_map.iter().enumerate() {
        canon_nodes[new] = nodes[old];
    }
    let children = canon.nt_order.iter().map(|&old| td.children(b)[old]).collect();
    BagRule { lhs_arity: sepset.len(), rhs: canon.rhs, children, nodes: canon_nodes }
}

/// Rule induced by a single bag, with weight 1.
pub fn extract_rule(td: &TreeDecomposition, graph: &Graph, bag: usize) -> Rule {
    let owners = edge_owners(td, graph);
    let owned: Vec<(NodeId, NodeId)> = owners.into_iter().filter(|&(_, b)| b == bag).map(|(e, _)| e).collect();
    let r = bag_rule(td, bag, &owned);
    Rule { lhs: r.lhs(), rhs: r.rhs, weight: 1.0 }
}

/// Probabilistic (or count-valued) HRG: rules grouped by left-hand side.
#[derive(Clone, Debug, PartialEq)]
pub struct Grammar {
    split_count: usize,
    rules: BTreeMap<Nonterminal, BTreeMap<RuleRhs, f64>>,
}

impl Grammar {
    pub fn new(split_count: usize) -> Self {
        Self { split_count: split_count.max(1), rules: BTreeMap::new() }
    }

    pub fn split_count(&self) -> usize {
        self.split_count
    }

    /// Adds `weight` to the rule, creating it if needed.
    pub fn add(&mut self, lhs: Nonterminal, rhs: RuleRhs, weight: f64) {
        *self.rules.entry(lhs).or_default().entry(rhs).or_insert(0.0) += weight;
    }

    pub fn weight(&self, lhs: &Nonterminal, rhs: &RuleRhs) -> Option<f64> {
        self.rules.get(lhs).and_then(|r| r.get(rhs)).copied()
    }

    pub fn rule_count(&self) -> usize {
        self.rules.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.rule_count() == 0
    }

    pub fn lhs_symbols(&self) -> impl Iterator<Item = &Nonterminal> {
        self.rules.keys()
    }

    pub fn rules_for(&self, lhs: &Nonterminal) -> impl Iterator<Item = (&RuleRhs, f64)> {
        self.rules.get(lhs).into_iter().flat_map(|r| r.iter().map(|(rhs, &w)| (rhs, w)))
    }

    pub fn rules(&self) -> impl Iterator<Item = Rule> + '_ {
        self.rules
            .iter()
            .flat_map(|(lhs, r)| r.iter().map(move |(rhs, &w)| Rule { lhs: *lhs, rhs: rhs.clone(), weight: w }))
    }

    pub fn lhs_totals(&self) -> BTreeMap<Nonterminal, f64> {
        self.rules.iter().map(|(lhs, r)| (*lhs, r.values().sum())).collect()
    }

    pub fn min_weight(&self) -> Option<f64> {
        self.rules.values().flat_map(|r| r.values().copied()).min_by(f64::total_cmp)
    }

    pub fn contains_start(&self) -> bool {
        self.rules.contains_key(&Nonterminal::start())
    }

    /// Divides every weight by its left-hand side total; zero-weight rules
    /// are dropped.
    pub fn normalize(&self) -> Result<Grammar> {
        let mut out = Grammar::new(self.split_count);
        for (lhs, rules) in &self.rules {
            if rules.values().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(HrgError::Normalization(format!("{lhs} has a negative or non-finite weight")));
            }
            let total: f64 = rules.values().sum();
            if total <= 0.0 {
                return Err(HrgError::Normalization(format!("{lhs} has zero total weight")));
            }
            let kept: BTreeMap<RuleRhs, f64> =
                rules.iter().filter(|(_, &w)| w > 0.0).map(|(rhs, &w)| (rhs.clone(), w / total)).collect();
            out.rules.insert(*lhs, kept);
        }
        Ok(out)
    }

    /// True when every left-hand side sums to one within `tol`.
    pub fn is_normalized(&self, tol: f64) -> bool {
        self.lhs_totals().values().all(|t| (t - 1.0).abs() <= tol)
    }

    /// Rule counts from one derivation (unsplit symbols, weight 1 per bag).
    pub fn from_derivation(derivation: &Derivation) -> Grammar {
        let mut g = Grammar::new(1);
        for rule in &derivation.bags {
            g.add(rule.lhs(), rule.rhs.clone(), 1.0);
        }
        g
    }

    /// One rule per line, preceded by a `# split_count=<n>` header.
    pub fn to_text(&self) -> String {
        let mut s = format!("# split_count={}\n", self.split_count);
        for rule in self.rules() {
            s.push_str(&rule.to_string());
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Grammar> {
        let mut split_count = None;
        let mut max_sub = 1;
        let mut rules = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(v) = comment.trim().strip_prefix("split_count=") {
                    split_count =
                        Some(v.trim().parse::<usize>().map_err(|e| HrgError::Parse {
                            line: idx + 1,
                            message: format!("bad split_count: {e}"),
                        })?);
                }
                continue;
            }
            let rule: Rule = line.parse().map_err(|message| HrgError::Parse { line: idx + 1, message })?;
            max_sub = rule
                .rhs
                .nonterminal_edges
                .iter()
                .map(|e| e.label.subsymbol)
                .chain([rule.lhs.subsymbol, max_sub])
                .max()
                .unwrap_or(1);
            rules.push(rule);
        }
        let mut g = Grammar::new(split_count.unwrap_or(max_sub as usize));
        for r in rules {
            g.add(r.lhs, r.rhs, r.weight);
        }
        Ok(g)
    }
}

/// Rule counts of one decomposition: one rule per bag, merged by canonical
/// form, weights are raw counts.
pub fn extract_grammar(graph: &Graph, td: &TreeDecomposition) -> Grammar {
    Grammar::from_derivation(&Derivation::extract(graph, td))
}

/// Sums weights of identical rules across grammars and normalizes.
pub fn merge_grammars(grammars: &[Grammar]) -> Result<Grammar> {
    merge_counts(grammars)?.normalize()
}

/// Sums weights of identical rules without normalizing.
pub fn merge_counts(grammars: &[Grammar]) -> Result<Grammar> {
    let Some(first) = grammars.first() else {
        return Ok(Grammar::new(1));
    };
    let mut out = Grammar::new(first.split_count);
    for g in grammars {
        if g.split_count != first.split_count {
            return Err(HrgError::Argument(format!(
                "cannot merge grammars with split counts {} and {}",
                first.split_count, g.split_count
            )));
        }
        for (lhs, rules) in &g.rules {
            for (rhs, &w) in rules {
                out.add(*lhs, rhs.clone(), w);
            }
        }
    }
    Ok(out)
}
