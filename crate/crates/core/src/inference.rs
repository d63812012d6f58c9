//! Held-out scoring with epsilon smoothing, and random generation.

use std::borrow::Cow;
use std::collections::{BTreeMap, VecDeque};

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{HrgError, Result};
use crate::grammar::{Derivation, Grammar, Nonterminal, RuleRhs};
use crate::graph::{seeded_rng, Graph, NodeId};
use crate::latent::{compute_chart, Skeleton, SubruleTables};
use crate::treedecomp::{binarize, decompose};

/// Decomposes, binarizes and extracts one graph.
pub fn derive(graph: &Graph) -> Result<Derivation> {
    let td = binarize(&decompose(graph)?);
    Ok(Derivation::extract(graph, &td))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SmoothingReport {
    pub unknown_rule_types: usize,
    pub unknown_rule_uses: usize,
    pub epsilon: f64,
    pub log_epsilon: f64,
    pub raw_log_likelihood: f64,
    pub adjusted_log_likelihood: f64,
}

impl SmoothingReport {
    pub fn to_json_line(&self) -> String {
        serde_json::json!({
            "raw_ll": self.raw_log_likelihood,
            "adjusted_ll": self.adjusted_log_likelihood,
            "unknown_types": self.unknown_rule_types,
            "unknown_uses": self.unknown_rule_uses,
            "epsilon": self.epsilon,
            "log_epsilon": self.log_epsilon,
        })
        .to_string()
    }
}

/// Scores graphs against one trained grammar.
#[derive(Clone, Debug)]
pub struct Scorer {
    tables: SubruleTables,
    min_log_probability: f64,
}

impl Scorer {
    pub fn new(grammar: &Grammar) -> Result<Self> {
        let tables = SubruleTables::from_grammar(grammar)?;
        let min_log_probability = tables
            .min_log_probability()
            .ok_or_else(|| HrgError::Argument("cannot score against an empty grammar".into()))?;
        Ok(Self { tables, min_log_probability })
    }

    /// Log of the smallest known subrule probability (may lie far below
    /// the smallest positive `f64` after long EM runs).
    pub fn min_log_probability(&self) -> f64 {
        self.min_log_probability
    }

    pub fn tables(&self) -> &SubruleTables {
        &self.tables
    }

    /// Decomposes, binarizes and extracts `graph`, then scores the derivation.
    pub fn score(&self, graph: &Graph, epsilon: f64) -> Result<SmoothingReport> {
        self.score_derivation(&derive(graph)?, epsilon)
    }

    /// As [`Scorer::score`] with epsilon given as its logarithm.
    pub fn score_log(&self, graph: &Graph, log_epsilon: f64) -> Result<SmoothingReport> {
        self.score_derivation_log(&derive(graph)?, log_epsilon)
    }

    /// Rules absent from the grammar are added with total mass `epsilon`
    /// per left-hand subsymbol, spread evenly over the child subsymbol
    /// combinations; known rules are left as they are.
    pub fn score_derivation(&self, derivation: &Derivation, epsilon: f64) -> Result<SmoothingReport> {
        if epsilon.is_nan() || epsilon <= 0.0 {
            return Err(HrgError::Config(format!("epsilon {epsilon:e} must be positive")));
        }
        self.score_derivation_log(derivation, epsilon.ln())
    }

    pub fn score_derivation_log(&self, derivation: &Derivation, log_epsilon: f64) -> Result<SmoothingReport> {
        if log_epsilon.is_nan() || log_epsilon >= self.min_log_probability {
            return Err(HrgError::Config(format!(
                "epsilon e^{log_epsilon} must be below the smallest known rule probability e^{}",
                self.min_log_probability
            )));
        }
        let mut tables = Cow::Borrowed(&self.tables);
        let mut unknown_types = 0;
        let mut unknown_uses = 0;
        for bag in &derivation.bags {
            if tables.lookup(bag.lhs_arity, &bag.rhs).is_some() {
                if self.tables.lookup(bag.lhs_arity, &bag.rhs).is_none() {
                    unknown_uses += 1;
                }
                continue;
            }
            let skeleton = Skeleton { lhs_arity: bag.lhs_arity, rhs: bag.rhs.shape() };
            let t = tables.to_mut();
            let id = t.insert(skeleton, 0.0);
            let combos: usize = t.child_dims(id).iter().product();
            let lp = log_epsilon - (combos as f64).ln();
            t.log_probs_mut(id).fill(lp);
            unknown_types += 1;
            unknown_uses += 1;
        }
        let raw = compute_chart(derivation, &tables)?.log_likelihood;
        Ok(SmoothingReport {
            unknown_rule_types: unknown_types,
            unknown_rule_uses: unknown_uses,
            epsilon: log_epsilon.exp(),
            log_epsilon,
            raw_log_likelihood: raw,
            adjusted_log_likelihood: raw - unknown_uses as f64 * log_epsilon,
        })
    }
}

/// One-shot form of [`Scorer::score`].
pub fn score_graph(grammar: &Grammar, graph: &Graph, epsilon: f64) -> Result<SmoothingReport> {
    Scorer::new(grammar)?.score(graph, epsilon)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TestsetSummary {
    pub reports: Vec<SmoothingReport>,
    pub mean: f64,
    /// Half-width of the 95% interval, `1.96 * s / sqrt(k)`.
    pub ci95: f64,
}

impl TestsetSummary {
    pub fn from_reports(reports: Vec<SmoothingReport>) -> Result<Self> {
        if reports.len() < 2 {
            return Err(HrgError::Argument("need at least two test graphs".into()));
        }
        let scores: Vec<f64> = reports.iter().map(|r| r.adjusted_log_likelihood).collect();
        let (mean, ci95) = mean_ci95(&scores);
        Ok(Self { reports, mean, ci95 })
    }

    /// One line per graph followed by a `{"mean", "ci95"}` summary line.
    pub fn to_json_lines(&self) -> String {
        let mut s = String::new();
        for r in &self.reports {
            s.push_str(&r.to_json_line());
            s.push('\n');
        }
        s.push_str(&serde_json::json!({ "mean": self.mean, "ci95": self.ci95 }).to_string());
        s.push('\n');
        s
    }
}

/// Mean and normal-approximation 95% half-width using the sample
/// standard deviation.
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, 1.96 * var.sqrt() / k.sqrt())
}

pub fn evaluate_testset(grammar: &Grammar, graphs: &[Graph], epsilon: f64) -> Result<TestsetSummary> {
    let scorer = Scorer::new(grammar)?;
    let reports = graphs.par_iter().map(|g| scorer.score(g, epsilon)).collect::<Result<Vec<_>>>()?;
    TestsetSummary::from_reports(reports)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GenerationLimits {
    pub max_nonterminal_expansions: usize,
    pub max_nodes: usize,
    pub max_retries: usize,
}

impl Default for GenerationLimits {
    fn default() -> Self {
        Self { max_nonterminal_expansions: 10_000, max_nodes: 10_000, max_retries: 100 }
    }
}

impl GenerationLimits {
    fn check(&self) -> Result<()> {
        if self.max_nonterminal_expansions == 0 || self.max_nodes == 0 || self.max_retries == 0 {
            return Err(HrgError::Argument(format!("generation limits must be positive: {self:?}")));
        }
        Ok(())
    }
}

struct Sampler<'a> {
    choices: BTreeMap<Nonterminal, (Vec<&'a RuleRhs>, WeightedIndex<f64>)>,
}

impl<'a> Sampler<'a> {
    fn new(grammar: &'a Grammar) -> Result<Self> {
        if !grammar.contains_start() {
            return Err(HrgError::Argument("grammar has no start rules".into()));
        }
        let mut choices = BTreeMap::new();
        for lhs in grammar.lhs_symbols() {
            let (rhs, w): (Vec<&RuleRhs>, Vec<f64>) = grammar.rules_for(lhs).unzip();
            if let Ok(dist) = WeightedIndex::new(&w) {
                choices.insert(*lhs, (rhs, dist));
            }
        }
        Ok(Self { choices })
    }

    /// One derivation attempt; `None` when a limit is hit or a nonterminal
    /// has no rules.
    fn derive<R: Rng>(&self, limits: &GenerationLimits, rng: &mut R) -> Option<Graph> {
        let mut graph = Graph::new();
        let mut next: NodeId = 0;
        let mut queue = VecDeque::from([(Nonterminal::start(), Vec::<NodeId>::new())]);
        let mut expansions = 0;
        while let Some((label, mut attached)) = queue.pop_front() {
            expansions += 1;
            if expansions > limits.max_nonterminal_expansions {
                return None;
            }
            let (rules, dist) = self.choices.get(&label)?;
            let rhs = rules[dist.sample(rng)];
            attached.shuffle(rng);
            let mut ids = vec![NodeId::MAX; rhs.node_count];
            for (&pos, &v) in rhs.external.iter().zip(&attached) {
                ids[pos] = v;
            }
            for id in ids.iter_mut().filter(|id| **id == NodeId::MAX) {
                *id = next;
                graph.add_node(next);
                next += 1;
            }
            if graph.node_count() > limits.max_nodes {
                return None;
            }
            for &(a, b) in &rhs.terminal_edges {
                graph.add_edge(ids[a], ids[b]);
            }
            for e in &rhs.nonterminal_edges {
                queue.push_back((e.label, e.attachments.iter().map(|&p| ids[p]).collect()));
            }
        }
        Some(graph)
    }
}

/// Samples one graph, retrying failed derivations up to `max_retries` times.
pub fn generate_graph(grammar: &Grammar, limits: &GenerationLimits, seed: u64) -> Result<Graph> {
    limits.check()?;
    let sampler = Sampler::new(grammar)?;
    let mut rng = seeded_rng(seed);
    for _ in 0..limits.max_retries {
        if let Some(g) = sampler.derive(limits, &mut rng) {
            return Ok(g);
        }
    }
    Err(HrgError::Generation(format!("no derivation finished within limits after {} tries", limits.max_retries)))
}

/// Samples until the node count is within `tolerance` of `target_nodes`.
pub fn generate_sized(
    grammar: &Grammar,
    target_nodes: usize,
    tolerance: usize,
    limits: &GenerationLimits,
    seed: u64,
) -> Result<Graph> {
    limits.check()?;
    let sampler = Sampler::new(grammar)?;
    let mut rng = seeded_rng(seed);
    let mut closest: Option<usize> = None;
    for _ in 0..limits.max_retries {
        let Some(g) = sampler.derive(limits, &mut rng) else { continue };
        let n = g.node_count();
        if n.abs_diff(target_nodes) <= tolerance {
            return Ok(g);
        }
        if closest.is_none_or(|c| n.abs_diff(target_nodes) < c.abs_diff(target_nodes)) {
            closest = Some(n);
        }
    }
    Err(HrgError::Generation(match closest {
        Some(c) => format!("no graph within {tolerance} of {target_nodes} nodes; closest size achieved: {c}"),
        None => format!("no derivation finished within limits after {} tries", limits.max_retries),
    }))
}
