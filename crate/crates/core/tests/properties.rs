//! Property tests for the invariants each module promises.

mod common;

use std::collections::BTreeMap;

use common::*;
use hrg_core::grammar::{canonicalize, Grammar, NonterminalEdge, RuleRhs};
use hrg_core::graph::{
    edge_list_string, generate_barabasi_albert, generate_watts_strogatz, parse_edge_list, sample_subgraph, Graph,
    NodeId,
};
use hrg_core::inference::{derive, generate_graph, GenerationLimits, Scorer};
use hrg_core::latent::{compute_chart, log_sum_exp, split_grammar, EmTrainer, SplitConfig, SubruleTables};
use hrg_core::metrics::{degree_distance, gcd, orbit_counts};
use hrg_core::treedecomp::{bag_edge_subgraph, binarize, decompose, validate};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, ..ProptestConfig::default() }
}

fn connected(seed: u64, nodes: usize) -> Graph {
    let mut r = rng(seed);
    let p = r.gen_range(0.0..0.5);
    random_connected(&mut r, nodes, p)
}

fn shuffled_labels(g: &Graph, seed: u64) -> Graph {
    let nodes: Vec<NodeId> = g.nodes().collect();
    let mut targets: Vec<NodeId> = (0..nodes.len() as NodeId).map(|v| v * 3 + 7).collect();
    targets.shuffle(&mut rng(seed));
    g.relabel(&nodes.into_iter().zip(targets).collect())
}

fn permute_rhs(rhs: &RuleRhs, perm: &[usize]) -> RuleRhs {
    let edge = |(u, v): (usize, usize)| (perm[u].min(perm[v]), perm[u].max(perm[v]));
    RuleRhs {
        node_count: rhs.node_count,
        external: rhs.external.iter().map(|&p| perm[p]).collect(),
        terminal_edges: rhs.terminal_edges.iter().map(|&e| edge(e)).collect(),
        nonterminal_edges: rhs
            .nonterminal_edges
            .iter()
            .map(|e| NonterminalEdge { label: e.label, attachments: e.attachments.iter().map(|&p| perm[p]).collect() })
            .collect(),
    }
}

fn all_permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in all_permutations(k - 1) {
        for i in 0..k {
            let mut q = p.clone();
            q.insert(i, k - 1);
            out.push(q);
        }
    }
    out
}

fn small_corpus(seed: u64, samples: usize) -> (Grammar, Vec<hrg_core::grammar::Derivation>) {
    let g = generate_barabasi_albert(200, 2, seed).unwrap();
    let derivations: Vec<_> =
        (0..samples).map(|k| derive(&sample_subgraph(&g, 12, seed ^ (k as u64 + 1)).unwrap()).unwrap()).collect();
    let counts: Vec<Grammar> = derivations.iter().map(Grammar::from_derivation).collect();
    (hrg_core::grammar::merge_counts(&counts).unwrap().normalize().unwrap(), derivations)
}

// graphcore

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn edge_list_round_trip(seed in any::<u64>(), nodes in 1usize..30) {
        let mut r = rng(seed);
        let g = random_gnp(&mut r, nodes, 0.2);
        let back = parse_edge_list(&edge_list_string(&g)).unwrap();
        // Isolated nodes have no edge-list representation.
        let edges: Vec<_> = g.edges().collect();
        prop_assert_eq!(back.edges().collect::<Vec<_>>(), edges);
        prop_assert_eq!(parse_edge_list(&edge_list_string(&back)).unwrap(), back);
    }

    #[test]
    fn barabasi_albert_edge_count(n in 3usize..400, seed in any::<u64>()) {
        let g = generate_barabasi_albert(n, 2, seed).unwrap();
        prop_assert!(well_formed(&g));
        prop_assert_eq!(g.node_count(), n);
        prop_assert_eq!(g.edge_count(), 2 * (n - 2));
        prop_assert_eq!(generate_barabasi_albert(n, 2, seed).unwrap(), g);
    }

    #[test]
    fn watts_strogatz_well_formed(n in 8usize..300, half in 1usize..4, p in 0.0f64..1.0, seed in any::<u64>()) {
        let g = generate_watts_strogatz(n, 2 * half, p, seed).unwrap();
        prop_assert!(well_formed(&g));
        prop_assert_eq!(g.node_count(), n);
        prop_assert_eq!(g.edge_count(), n * half);
        prop_assert_eq!(generate_watts_strogatz(n, 2 * half, p, seed).unwrap(), g);
    }

    #[test]
    fn samples_connected_and_sized(size in 1usize..40, seed in any::<u64>()) {
        let g = generate_barabasi_albert(300, 2, seed).unwrap();
        let s = sample_subgraph(&g, size, seed.wrapping_add(1)).unwrap();
        prop_assert_eq!(s.node_count(), size);
        prop_assert!(s.is_connected());
        prop_assert!(well_formed(&s));
        for (u, v) in s.edges() {
            prop_assert!(g.has_edge(u, v));
        }
        prop_assert_eq!(sample_subgraph(&g, size, seed.wrapping_add(1)).unwrap(), s);
    }
}

// treedecomp

proptest! {
    #![proptest_config(config(128))]

    #[test]
    fn decomposition_valid_and_deterministic(seed in any::<u64>(), nodes in 1usize..26) {
        let g = connected(seed, nodes);
        let td = decompose(&g).unwrap();
        prop_assert!(validate(&td, &g).is_valid());
        prop_assert_eq!(&decompose(&g).unwrap(), &td);
        let bin = binarize(&td);
        prop_assert!(validate(&bin, &g).is_valid());
        prop_assert_eq!(bin.width(), td.width());
        prop_assert!(bin.max_children() <= 2);
    }

    #[test]
    fn edge_subgraphs_and_sepsets(seed in any::<u64>(), nodes in 1usize..26) {
        let g = connected(seed, nodes);
        let td = binarize(&decompose(&g).unwrap());
        let h: Vec<_> = (0..td.len()).map(|b| bag_edge_subgraph(&td, &g, b)).collect();
        prop_assert_eq!(&h[td.root()], &g.edges().collect());
        prop_assert!(td.sepset(td.root()).is_empty());
        for b in 0..td.len() {
            if let Some(p) = td.parent(b) {
                prop_assert!(h[b].is_subset(&h[p]));
                let sep = td.sepset(b);
                prop_assert!(sep.is_subset(td.bag(b)) && sep.is_subset(td.bag(p)));
            }
        }
    }
}

// grammar

proptest! {
    #![proptest_config(config(128))]

    #[test]
    fn terminal_edges_partition_graph(seed in any::<u64>(), nodes in 2usize..26) {
        let g = connected(seed, nodes);
        let d = derive(&g).unwrap();
        let terminals: usize = d.bags.iter().map(|b| b.rhs.terminal_edges.len()).sum();
        prop_assert_eq!(terminals, g.edge_count());
        prop_assert_eq!(d.replay(), g);
    }

    #[test]
    fn canonicalization_idempotent_and_invariant(seed in any::<u64>(), nodes in 2usize..20) {
        let g = connected(seed, nodes);
        let d = derive(&g).unwrap();
        let mut r = rng(seed ^ 0x5eed);
        for rule in &d.bags {
            let canon = canonicalize(&rule.rhs);
            prop_assert_eq!(&canonicalize(&canon), &canon);
            let perms = if rule.rhs.node_count <= 6 {
                all_permutations(rule.rhs.node_count)
            } else {
                (0..8)
                    .map(|_| {
                        let mut perm: Vec<usize> = (0..rule.rhs.node_count).collect();
                        perm.shuffle(&mut r);
                        perm
                    })
                    .collect()
            };
            for perm in perms {
                prop_assert_eq!(&canonicalize(&permute_rhs(&rule.rhs, &perm)), &canon);
            }
        }
    }

    #[test]
    fn normalize_idempotent_and_text_round_trip(seed in any::<u64>(), samples in 1usize..6) {
        let g = generate_barabasi_albert(120, 2, seed).unwrap();
        let grammars: Vec<Grammar> = (0..samples)
            .map(|k| Grammar::from_derivation(&derive(&sample_subgraph(&g, 10, seed ^ k as u64).unwrap()).unwrap()))
            .collect();
        let merged = hrg_core::grammar::merge_counts(&grammars).unwrap();
        let once = merged.normalize().unwrap();
        let twice = once.normalize().unwrap();
        prop_assert!(once.is_normalized(1e-12));
        for rule in once.rules() {
            let w = twice.weight(&rule.lhs, &rule.rhs).unwrap();
            prop_assert!((w - rule.weight).abs() <= 1e-15);
        }
        prop_assert_eq!(Grammar::from_text(&once.to_text()).unwrap().to_text(), once.to_text());
    }
}

// latent

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn split_table_shapes(seed in any::<u64>(), n in 1usize..4) {
        let (base, _) = small_corpus(seed, 4);
        let split = split_grammar(&base, &SplitConfig { n, jitter: 0.01, seed }).unwrap();
        prop_assert!(split.is_normalized(1e-9));
        let t = SubruleTables::from_grammar(&split).unwrap();
        for s in 0..t.len() {
            let dims = t.lhs_dim(s) * t.child_dims(s).iter().product::<usize>();
            prop_assert_eq!(t.log_probs(s).len(), dims);
            let sk = t.skeleton(s);
            let lhs = if sk.lhs_arity == 0 { 1 } else { n };
            let children: usize = sk.rhs.nonterminal_edges.iter().map(|e| if e.label.arity == 0 { 1 } else { n }).product();
            prop_assert_eq!(dims, lhs * children);
        }
    }

    #[test]
    fn inside_outside_consistent(seed in any::<u64>(), nodes in 2usize..20, n in 1usize..4) {
        let g = connected(seed, nodes);
        let d = derive(&g).unwrap();
        let base = Grammar::from_derivation(&d).normalize().unwrap();
        let mut t = SubruleTables::from_grammar(&split_grammar(&base, &SplitConfig { n, jitter: 0.0, seed }).unwrap()).unwrap();
        let mut r = rng(seed);
        for s in 0..t.len() {
            for lp in t.log_probs_mut(s) {
                *lp = r.gen_range(0.01f64..1.0).ln();
            }
        }
        let chart = compute_chart(&d, &t).unwrap();
        for b in 0..d.len() {
            let terms: Vec<f64> = chart.inside[b].iter().zip(&chart.outside[b]).map(|(i, o)| i + o).collect();
            let total = log_sum_exp(&terms);
            prop_assert!((total - chart.log_likelihood).abs() <= 1e-9 * chart.log_likelihood.abs().max(1.0));
        }
    }

    #[test]
    fn em_never_decreases(seed in any::<u64>(), n in 2usize..4) {
        let (base, derivations) = small_corpus(seed, 6);
        let split = split_grammar(&base, &SplitConfig { n, jitter: 0.05, seed }).unwrap();
        let mut trainer = EmTrainer::new(&split, &derivations).unwrap();
        for _ in 0..8 {
            trainer.step().unwrap();
            prop_assert!(trainer.grammar().is_normalized(1e-9));
        }
        for w in trainer.trace().windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-9);
        }
    }
}

// inference

proptest! {
    #![proptest_config(config(48))]

    #[test]
    fn smoothing_invariant_and_bounded(seed in any::<u64>(), n in 1usize..3) {
        let (base, _) = small_corpus(seed, 8);
        let grammar = split_grammar(&base, &SplitConfig { n, jitter: 0.01, seed }).unwrap();
        let scorer = Scorer::new(&grammar).unwrap();
        let cap = scorer.min_log_probability() - 10f64.ln();
        let test = sample_subgraph(&generate_watts_strogatz(200, 4, 0.2, seed).unwrap(), 12, seed).unwrap();
        let reports: Vec<_> = [0.0, 5.0, 20.0].iter().map(|k| scorer.score_log(&test, cap - k).unwrap()).collect();
        for r in &reports {
            prop_assert!(r.adjusted_log_likelihood <= 1e-12);
            prop_assert!((r.adjusted_log_likelihood - reports[0].adjusted_log_likelihood).abs() <= 1e-6);
            prop_assert_eq!(r.unknown_rule_uses, reports[0].unknown_rule_uses);
        }
    }

    #[test]
    fn known_graph_scores_match_inside(seed in any::<u64>(), nodes in 2usize..20) {
        let g = connected(seed, nodes);
        let d = derive(&g).unwrap();
        let grammar = Grammar::from_derivation(&d).normalize().unwrap();
        let report = Scorer::new(&grammar).unwrap().score(&g, 1e-300).unwrap();
        prop_assert_eq!(report.unknown_rule_uses, 0);
        let tables = SubruleTables::from_grammar(&grammar).unwrap();
        let chart = compute_chart(&d, &tables).unwrap();
        prop_assert!((report.raw_log_likelihood - chart.log_likelihood).abs() <= 1e-12);
        // At n = 1 the likelihood is the product of the per-bag rule probabilities.
        let direct: f64 = d.bags.iter().map(|b| grammar.weight(&b.lhs(), &b.rhs).unwrap().ln()).sum();
        prop_assert!((report.raw_log_likelihood - direct).abs() <= 1e-9 * direct.abs().max(1.0));
    }

    #[test]
    fn generated_graphs_well_formed(seed in any::<u64>()) {
        let (base, _) = small_corpus(seed % 8, 10);
        let g = generate_graph(&base, &GenerationLimits::default(), seed).unwrap();
        prop_assert!(well_formed(&g));
        prop_assert!(g.node_count() >= 2);
        prop_assert_eq!(generate_graph(&base, &GenerationLimits::default(), seed).unwrap(), g);
    }
}

// metrics

proptest! {
    #![proptest_config(config(96))]

    #[test]
    fn metrics_symmetric_bounded_invariant(s1 in any::<u64>(), s2 in any::<u64>(), n1 in 2usize..18, n2 in 2usize..18) {
        let (a, b) = (connected(s1, n1), connected(s2, n2));
        let dd = degree_distance(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&dd));
        prop_assert_eq!(dd, degree_distance(&b, &a).unwrap());
        let g = gcd(&a, &b).unwrap();
        prop_assert!(g >= 0.0);
        prop_assert!((g - gcd(&b, &a).unwrap()).abs() <= 1e-12);
        let a2 = shuffled_labels(&a, s2);
        prop_assert!((degree_distance(&a2, &b).unwrap() - dd).abs() <= 1e-12);
        prop_assert!((gcd(&a2, &b).unwrap() - g).abs() <= 1e-12);
    }

    #[test]
    fn orbit_zero_is_degree(seed in any::<u64>(), nodes in 1usize..30) {
        let mut r = rng(seed);
        let g = random_gnp(&mut r, nodes, 0.25);
        let m = orbit_counts(&g);
        let degrees: BTreeMap<NodeId, u64> = g.nodes().map(|v| (v, g.degree(v) as u64)).collect();
        for (v, d) in degrees {
            prop_assert_eq!(m.row(v).unwrap()[0], d);
        }
    }
}
