//! Latent subsymbols for HRG nonterminals, trained with inside-outside EM.
//!
//! A rule with `r` right-hand-side nonterminals is split into one subrule per
//! combination of subsymbols (left-hand side first, then the hyperedges in
//! canonical order). The start symbol `N^0` keeps a single subsymbol.
//! Subrule probabilities live in dense log-space tables, one per rule
//! skeleton (the unsplit rule), so the E-step is pure array work.

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{HrgError, Result};
use crate::grammar::{Derivation, Grammar, Nonterminal, RuleRhs};
use crate::graph::seeded_rng;

#[derive(Clone, Debug, PartialEq)]
pub struct SplitConfig {
    pub n: usize,
    /// Relative amplitude of the multiplicative noise applied at split time.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { n: 2, jitter: 0.01, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmConfig {
    pub max_iterations: usize,
    pub rel_tolerance: f64,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self { max_iterations: 50, rel_tolerance: 1e-4, seed: 0 }
    }
}

/// Number of subsymbols a nonterminal of this arity carries.
fn dims(n: usize, arity: usize) -> usize {
    if arity == 0 {
        1
    } else {
        n
    }
}

/// Numerically stable `ln(sum(exp(x)))`; `-inf` for an empty or all `-inf`
/// input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Splits every nonterminal of an unsplit grammar into `cfg.n` subsymbols.
pub fn split_grammar(grammar: &Grammar, cfg: &SplitConfig) -> Result<Grammar> {
    if grammar.split_count() != 1 {
        return Err(HrgError::Argument(format!(
            "can only split an unsplit grammar (split_count = {})",
            grammar.split_count()
        )));
    }
    if cfg.n == 0 || !(0.0..1.0).contains(&cfg.jitter) {
        return Err(HrgError::Argument(format!("bad split config {cfg:?}")));
    }
    let n = cfg.n;
    let mut rng = seeded_rng(cfg.seed);
    let mut out = Grammar::new(n);
    for rule in grammar.rules() {
        let child_dims: Vec<usize> = rule.rhs.nonterminal_edges.iter().map(|e| dims(n, e.label.arity)).collect();
        let combos: usize = child_dims.iter().product();
        let share = rule.weight / combos as f64;
        for i in 0..dims(n, rule.lhs.arity) {
            let lhs = Nonterminal::new(rule.lhs.arity, i as u32 + 1);
            for combo in 0..combos {
                let subs = decode(combo, &child_dims);
                let noise = if n > 1 && cfg.jitter > 0.0 { 1.0 + rng.gen_range(-cfg.jitter..=cfg.jitter) } else { 1.0 };
                let subs: Vec<u32> = subs.into_iter().map(|s| s as u32 + 1).collect();
                out.add(lhs, rule.rhs.with_subsymbols(&subs), share * noise);
            }
        }
    }
    out.normalize()
}

/// Mixed-radix decode, last digit fastest.
fn decode(mut flat: usize, radices: &[usize]) -> Vec<usize> {
    let mut digits = vec![0; radices.len()];
    for (d, &r) in digits.iter_mut().zip(radices).rev() {
        *d = flat % r;
        flat /= r;
    }
    digits
}

/// An unsplit rule: left-hand arity plus a right-hand side with every
/// subsymbol set to 1.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Skeleton {
    pub lhs_arity: usize,
    pub rhs: RuleRhs,
}

impl Skeleton {
    pub fn display(&self) -> String {
        format!("{} -> {}", Nonterminal::unsplit(self.lhs_arity), self.rhs)
    }
}

/// Dense subrule log-probabilities, one table per skeleton. Entry
/// `((i * d_1 + j_1) * d_2 + j_2) ...` holds `ln P(X_i -> Y_j1 Z_j2 ...)`
/// with 0-based subsymbols.
#[derive(Clone, Debug)]
pub struct SubruleTables {
    n: usize,
    skeletons: Vec<Skeleton>,
    child_dims: Vec<Vec<usize>>,
    index: HashMap<Skeleton, usize>,
    log_prob: Vec<Vec<f64>>,
}

impl SubruleTables {
    pub fn new(n: usize) -> Self {
        Self { n, skeletons: Vec::new(), child_dims: Vec::new(), index: HashMap::new(), log_prob: Vec::new() }
    }

    pub fn from_grammar(grammar: &Grammar) -> Result<Self> {
        let mut t = Self::new(grammar.split_count());
        for rule in grammar.rules() {
            let skeleton = Skeleton { lhs_arity: rule.lhs.arity, rhs: rule.rhs.shape() };
            let id = t.insert(skeleton, f64::NEG_INFINITY);
            let lhs_dim = dims(t.n, rule.lhs.arity);
            let subs = rule.rhs.subsymbols();
            let in_range = |s: u32, d: usize| s >= 1 && (s as usize) <= d;
            if !in_range(rule.lhs.subsymbol, lhs_dim)
                || !subs.iter().zip(&t.child_dims[id]).all(|(&s, &d)| in_range(s, d))
            {
                return Err(HrgError::Argument(format!("subsymbol out of range in {rule}")));
            }
            let mut flat = rule.lhs.subsymbol as usize - 1;
            for (&s, &d) in subs.iter().zip(&t.child_dims[id]) {
                flat = flat * d + (s as usize - 1);
            }
            t.log_prob[id][flat] = rule.weight.ln();
        }
        Ok(t)
    }

    /// Adds a skeleton with every entry set to `log_p` (no-op if present).
    pub fn insert(&mut self, skeleton: Skeleton, log_p: f64) -> usize {
        if let Some(&id) = self.index.get(&skeleton) {
            return id;
        }
        let child_dims: Vec<usize> =
            skeleton.rhs.nonterminal_edges.iter().map(|e| dims(self.n, e.label.arity)).collect();
        let len = dims(self.n, skeleton.lhs_arity) * child_dims.iter().product::<usize>();
        let id = self.skeletons.len();
        self.index.insert(skeleton.clone(), id);
        self.skeletons.push(skeleton);
        self.child_dims.push(child_dims);
        self.log_prob.push(vec![log_p; len]);
        id
    }

    pub fn to_grammar(&self) -> Grammar {
        let mut g = Grammar::new(self.n);
        for (id, skeleton) in self.skeletons.iter().enumerate() {
            let combos: usize = self.child_dims[id].iter().product();
            for (flat, &lp) in self.log_prob[id].iter().enumerate() {
                let p = lp.exp();
                if p > 0.0 {
                    let lhs = Nonterminal::new(skeleton.lhs_arity, (flat / combos) as u32 + 1);
                    let subs: Vec<u32> =
                        decode(flat % combos, &self.child_dims[id]).into_iter().map(|s| s as u32 + 1).collect();
                    g.add(lhs, skeleton.rhs.with_subsymbols(&subs), p);
                }
            }
        }
        g
    }

    pub fn split_count(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.skeletons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.skeletons.is_empty()
    }

    pub fn skeleton(&self, id: usize) -> &Skeleton {
        &self.skeletons[id]
    }

    pub fn lookup(&self, lhs_arity: usize, rhs: &RuleRhs) -> Option<usize> {
        self.index.get(&Skeleton { lhs_arity, rhs: rhs.shape() }).copied()
    }

    pub fn log_probs(&self, id: usize) -> &[f64] {
        &self.log_prob[id]
    }

    pub fn log_probs_mut(&mut self, id: usize) -> &mut [f64] {
        &mut self.log_prob[id]
    }

    pub fn child_dims(&self, id: usize) -> &[usize] {
        &self.child_dims[id]
    }

    pub fn lhs_dim(&self, id: usize) -> usize {
        dims(self.n, self.skeletons[id].lhs_arity)
    }

    /// Log of the smallest positive subrule probability.
    pub fn min_log_probability(&self) -> Option<f64> {
        self.log_prob.iter().flatten().copied().filter(|lp| lp.is_finite()).min_by(f64::total_cmp)
    }

    /// Skeleton id for every bag of the derivation.
    pub fn bind(&self, derivation: &Derivation) -> Result<Vec<usize>> {
        derivation
            .bags
            .iter()
            .map(|b| {
                self.lookup(b.lhs_arity, &b.rhs).ok_or_else(|| {
                    HrgError::UnknownRule(Skeleton { lhs_arity: b.lhs_arity, rhs: b.rhs.clone() }.display())
                })
            })
            .collect()
    }
}

/// Log-space inside/outside charts of one derivation, indexed
/// `[bag][subsymbol]`.
#[derive(Clone, Debug)]
pub struct ChartTables {
    pub inside: Vec<Vec<f64>>,
    pub outside: Vec<Vec<f64>>,
    /// `ln P(T)`, the inside value of the root's start symbol.
    pub log_likelihood: f64,
}

/// Expected subrule counts, aligned with the skeletons of a [`SubruleTables`].
#[derive(Clone, Debug)]
pub struct ExpectedCounts {
    pub counts: Vec<Vec<f64>>,
}

impl ExpectedCounts {
    pub fn zeros(tables: &SubruleTables) -> Self {
        Self { counts: tables.log_prob.iter().map(|t| vec![0.0; t.len()]).collect() }
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().flatten().sum()
    }

    pub fn merge(&mut self, other: &ExpectedCounts) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    /// Counts as a grammar over the same skeletons (zero counts omitted).
    pub fn to_grammar(&self, tables: &SubruleTables) -> Grammar {
        let mut t = tables.clone();
        for (lp, c) in t.log_prob.iter_mut().zip(&self.counts) {
            for (l, &x) in lp.iter_mut().zip(c) {
                *l = x.ln();
            }
        }
        t.to_grammar()
    }
}

fn inside_bound(d: &Derivation, tables: &SubruleTables, skel: &[usize]) -> Vec<Vec<f64>> {
    let mut inside: Vec<Vec<f64>> = vec![Vec::new(); d.len()];
    let mut terms = Vec::new();
    for &b in &d.postorder {
        let id = skel[b];
        let table = &tables.log_prob[id];
        let cdims = &tables.child_dims[id];
        let combos: usize = cdims.iter().product();
        let children = &d.bags[b].children;
        let mut row = Vec::with_capacity(tables.lhs_dim(id));
        for i in 0..tables.lhs_dim(id) {
            terms.clear();
            for combo in 0..combos {
                let lp = table[i * combos + combo];
                if lp == f64::NEG_INFINITY {
                    continue;
                }
                let js = decode(combo, cdims);
                let s: f64 = children.iter().zip(&js).map(|(&c, &j)| inside[c][j]).sum();
                terms.push(lp + s);
            }
            row.push(log_sum_exp(&terms));
        }
        inside[b] = row;
    }
    inside
}

fn outside_bound(d: &Derivation, tables: &SubruleTables, skel: &[usize], inside: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut outside: Vec<Vec<f64>> = vec![Vec::new(); d.len()];
    outside[d.root] = vec![f64::NEG_INFINITY; tables.lhs_dim(skel[d.root])];
    outside[d.root][0] = 0.0;
    for &b in d.postorder.iter().rev() {
        let id = skel[b];
        let children = &d.bags[b].children;
        if children.is_empty() {
            continue;
        }
        let table = &tables.log_prob[id];
        let cdims = &tables.child_dims[id];
        let combos: usize = cdims.iter().product();
        let mut terms: Vec<Vec<Vec<f64>>> = cdims.iter().map(|&dim| vec![Vec::new(); dim]).collect();
        for i in 0..tables.lhs_dim(id) {
            let out = outside[b][i];
            if out == f64::NEG_INFINITY {
                continue;
            }
            for combo in 0..combos {
                let lp = table[i * combos + combo];
                if lp == f64::NEG_INFINITY {
                    continue;
                }
                let js = decode(combo, cdims);
                let ins: Vec<f64> = children.iter().zip(&js).map(|(&c, &j)| inside[c][j]).collect();
                let all: f64 = ins.iter().sum();
                for (k, &j) in js.iter().enumerate() {
                    // sum of sibling insides, recomputed to avoid inf - inf
                    let siblings: f64 = if ins[k].is_finite() {
                        all - ins[k]
                    } else {
                        ins.iter().enumerate().filter(|&(q, _)| q != k).map(|(_, v)| v).sum()
                    };
                    terms[k][j].push(out + lp + siblings);
                }
            }
        }
        for (k, &c) in children.iter().enumerate() {
            outside[c] = terms[k].iter().map(|t| log_sum_exp(t)).collect();
        }
    }
    outside
}

fn chart_bound(d: &Derivation, tables: &SubruleTables, skel: &[usize]) -> ChartTables {
    let inside = inside_bound(d, tables, skel);
    let outside = outside_bound(d, tables, skel, &inside);
    let log_likelihood = inside[d.root][0];
    ChartTables { inside, outside, log_likelihood }
}

/// Posterior of every subrule at every bag, added into `counts`.
fn accumulate_bound(
    d: &Derivation,
    tables: &SubruleTables,
    skel: &[usize],
    chart: &ChartTables,
    counts: &mut ExpectedCounts,
) -> Result<()> {
    let log_pt = chart.log_likelihood;
    if log_pt == f64::NEG_INFINITY {
        return Err(HrgError::ZeroLikelihood);
    }
    for (b, &id) in skel.iter().enumerate() {
        let table = &tables.log_prob[id];
        let cdims = &tables.child_dims[id];
        let combos: usize = cdims.iter().product();
        let children = &d.bags[b].children;
        let target = &mut counts.counts[id];
        for i in 0..tables.lhs_dim(id) {
            let out = chart.outside[b][i];
            if out == f64::NEG_INFINITY {
                continue;
            }
            for combo in 0..combos {
                let lp = table[i * combos + combo];
                if lp == f64::NEG_INFINITY {
                    continue;
                }
                let js = decode(combo, cdims);
                let s: f64 = children.iter().zip(&js).map(|(&c, &j)| chart.inside[c][j]).sum();
                target[i * combos + combo] += (out + lp + s - log_pt).exp();
            }
        }
    }
    Ok(())
}

/// Bottom-up inside values (log space), `[bag][subsymbol]`.
pub fn compute_inside(derivation: &Derivation, tables: &SubruleTables) -> Result<Vec<Vec<f64>>> {
    let skel = tables.bind(derivation)?;
    Ok(inside_bound(derivation, tables, &skel))
}

/// Top-down outside values (log space) given the inside chart.
pub fn compute_outside(derivation: &Derivation, tables: &SubruleTables, inside: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let skel = tables.bind(derivation)?;
    Ok(outside_bound(derivation, tables, &skel, inside))
}

pub fn compute_chart(derivation: &Derivation, tables: &SubruleTables) -> Result<ChartTables> {
    let skel = tables.bind(derivation)?;
    Ok(chart_bound(derivation, tables, &skel))
}

/// Adds one derivation's expected subrule counts to `counts`.
pub fn accumulate_expected_counts(
    derivation: &Derivation,
    tables: &SubruleTables,
    chart: &ChartTables,
    counts: &mut ExpectedCounts,
) -> Result<()> {
    let skel = tables.bind(derivation)?;
    accumulate_bound(derivation, tables, &skel, chart, counts)
}

/// Re-estimates probabilities from expected counts, normalizing per
/// left-hand subsymbol across all skeletons sharing the left-hand arity.
/// A subsymbol with zero total count keeps its previous probabilities.
fn maximize(tables: &mut SubruleTables, counts: &ExpectedCounts) {
    let mut totals: HashMap<(usize, usize), f64> = HashMap::new();
    for (id, c) in counts.counts.iter().enumerate() {
        let arity = tables.skeletons[id].lhs_arity;
        let combos: usize = tables.child_dims[id].iter().product();
        for (flat, &x) in c.iter().enumerate() {
            *totals.entry((arity, flat / combos)).or_insert(0.0) += x;
        }
    }
    for (id, c) in counts.counts.iter().enumerate() {
        let arity = tables.skeletons[id].lhs_arity;
        let combos: usize = tables.child_dims[id].iter().product();
        for (flat, &x) in c.iter().enumerate() {
            let total = totals[&(arity, flat / combos)];
            if total > 0.0 {
                tables.log_prob[id][flat] = (x / total).ln();
            }
        }
    }
}

/// Drives EM one iteration at a time over a fixed corpus of derivations.
pub struct EmTrainer<'a> {
    tables: SubruleTables,
    corpus: Vec<(&'a Derivation, Vec<usize>)>,
    trace: Vec<f64>,
}

impl<'a> EmTrainer<'a> {
    pub fn new(grammar: &Grammar, derivations: &'a [Derivation]) -> Result<Self> {
        let tables = SubruleTables::from_grammar(grammar)?;
        let corpus = derivations.iter().map(|d| Ok((d, tables.bind(d)?))).collect::<Result<Vec<_>>>()?;
        Ok(Self { tables, corpus, trace: Vec::new() })
    }

    /// Total log-likelihood and expected counts under the current parameters.
    pub fn expectation(&self) -> Result<(f64, ExpectedCounts)> {
        let per_tree: Vec<(f64, ExpectedCounts)> = self
            .corpus
            .par_iter()
            .map(|(d, skel)| {
                let chart = chart_bound(d, &self.tables, skel);
                let mut counts = ExpectedCounts::zeros(&self.tables);
                accumulate_bound(d, &self.tables, skel, &chart, &mut counts)?;
                Ok((chart.log_likelihood, counts))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut total = ExpectedCounts::zeros(&self.tables);
        let mut ll = 0.0;
        for (l, c) in &per_tree {
            ll += l;
            total.merge(c);
        }
        Ok((ll, total))
    }

    /// One E-step plus M-step. Returns the log-likelihood measured before
    /// the update.
    pub fn step(&mut self) -> Result<f64> {
        let (ll, counts) = self.expectation()?;
        maximize(&mut self.tables, &counts);
        self.trace.push(ll);
        Ok(ll)
    }

    pub fn trace(&self) -> &[f64] {
        &self.trace
    }

    pub fn tables(&self) -> &SubruleTables {
        &self.tables
    }

    pub fn grammar(&self) -> Grammar {
        self.tables.to_grammar()
    }
}

/// Runs EM until `max_iterations` or until the relative improvement of the
/// total log-likelihood drops below `rel_tolerance`. Returns the trained
/// grammar (zero-probability subrules dropped) and the per-iteration trace.
pub fn em_train(grammar: &Grammar, derivations: &[Derivation], cfg: &EmConfig) -> Result<(Grammar, Vec<f64>)> {
    if cfg.max_iterations == 0 || cfg.rel_tolerance <= 0.0 {
        return Err(HrgError::Argument(format!("bad EM config {cfg:?}")));
    }
    let mut trainer = EmTrainer::new(grammar, derivations)?;
    for _ in 0..cfg.max_iterations {
        let ll = trainer.step()?;
        let trace = trainer.trace();
        if let [.., prev, _] = trace {
            let gain = (ll - prev) / prev.abs().max(f64::MIN_POSITIVE);
            if gain < cfg.rel_tolerance {
                break;
            }
        }
    }
    let trace = trainer.trace().to_vec();
    Ok((trainer.grammar(), trace))
}

/// `iteration<TAB>total_log_likelihood` rows, 1-based, with a header line.
pub fn trace_tsv(trace: &[f64]) -> String {
    let mut s = String::from("iteration\ttotal_log_likelihood\n");
    for (i, ll) in trace.iter().enumerate() {
        s.push_str(&format!("{}\t{}\n", i + 1, ll));
    }
    s
}
