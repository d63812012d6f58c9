//! Hyperedge replacement grammars with latent nonterminal subsymbols:
//! extraction from tree decompositions, EM training, smoothed scoring,
//! generation and graph-comparison metrics.

pub mod error;
pub mod grammar;
pub mod graph;
pub mod harness;
pub mod inference;
pub mod latent;
pub mod metrics;
pub mod treedecomp;

pub use error::{HrgError, Result};
pub use grammar::{Derivation, Grammar, Nonterminal, Rule, RuleRhs};
pub use graph::{Graph, NodeId};
pub use treedecomp::TreeDecomposition;
