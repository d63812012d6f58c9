//! End-to-end experiment pipeline: sample, decompose, extract, merge,
//! split, train, score and report.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{HrgError, Result};
use crate::grammar::{merge_counts, Derivation, Grammar, Rule};
use crate::graph::{
    generate_barabasi_albert, generate_watts_strogatz, read_edge_list, sample_subgraph, seeded_rng, Graph, NodeId,
};
use crate::inference::{derive, Scorer, SmoothingReport, TestsetSummary};
use crate::latent::{em_train, split_grammar, EmConfig, SplitConfig};

/// SplitMix64 finalizer over `(seed, stream, index)`, used to derive
/// independent seeds for every stage and sample.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Synthetic graph recipe: `ba:<nodes>:<m>[:seed]` or
/// `ws:<nodes>:<k>:<p>[:seed]`.
#[derive(Clone, Debug, PartialEq)]
pub enum GeneratorSpec {
    BarabasiAlbert { nodes: usize, attach: usize, seed: Option<u64> },
    WattsStrogatz { nodes: usize, degree: usize, rewire: f64, seed: Option<u64> },
}

impl GeneratorSpec {
    /// Builds the graph, using `fallback_seed` when the spec has none.
    pub fn generate(&self, fallback_seed: u64) -> Result<Graph> {
        match *self {
            Self::BarabasiAlbert { nodes, attach, seed } => {
                generate_barabasi_albert(nodes, attach, seed.unwrap_or(fallback_seed))
            }
            Self::WattsStrogatz { nodes, degree, rewire, seed } => {
                generate_watts_strogatz(nodes, degree, rewire, seed.unwrap_or(fallback_seed))
            }
        }
    }
}

impl FromStr for GeneratorSpec {
    type Err = HrgError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || HrgError::Config(format!("bad generator spec {s:?}"));
        let parts: Vec<&str> = s.split(':').collect();
        let num = |i: usize| parts.get(i).ok_or_else(bad)?.parse::<usize>().map_err(|_| bad());
        let seed = |i: usize| parts.get(i).map(|p| p.parse::<u64>().map_err(|_| bad())).transpose();
        match parts[0] {
            "ba" if parts.len() <= 4 => Ok(Self::BarabasiAlbert { nodes: num(1)?, attach: num(2)?, seed: seed(3)? }),
            "ws" if parts.len() <= 5 => Ok(Self::WattsStrogatz {
                nodes: num(1)?,
                degree: num(2)?,
                rewire: parts.get(3).ok_or_else(bad)?.parse().map_err(|_| bad())?,
                seed: seed(4)?,
            }),
            _ => Err(bad()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum GraphSource {
    File(PathBuf),
    Generator(GeneratorSpec),
}

impl GraphSource {
    pub fn load(&self, fallback_seed: u64) -> Result<Graph> {
        match self {
            Self::File(path) => read_edge_list(std::io::BufReader::new(std::fs::File::open(path)?)),
            Self::Generator(spec) => spec.generate(fallback_seed),
        }
    }
}

impl FromStr for GraphSource {
    type Err = HrgError;

    /// Anything starting with `ba:` or `ws:` is a generator, everything
    /// else a path.
    fn from_str(s: &str) -> Result<Self> {
        if s.starts_with("ba:") || s.starts_with("ws:") {
            Ok(Self::Generator(s.parse()?))
        } else {
            Ok(Self::File(PathBuf::from(s)))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    CrossGraph,
    DisjointPartition,
}

impl FromStr for Mode {
    type Err = HrgError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross-graph" => Ok(Self::CrossGraph),
            "disjoint-partition" => Ok(Self::DisjointPartition),
            _ => Err(HrgError::Config(format!("unknown mode {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub train_source: GraphSource,
    /// Ignored in disjoint-partition mode.
    pub test_source: Option<GraphSource>,
    pub mode: Mode,
    pub num_train_samples: usize,
    pub num_test_samples: usize,
    pub sample_size: usize,
    pub splits: usize,
    pub epsilon: f64,
    pub jitter: f64,
    pub em: EmConfig,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn new(train_source: GraphSource, test_source: Option<GraphSource>) -> Self {
        Self {
            train_source,
            test_source,
            mode: Mode::CrossGraph,
            num_train_samples: 500,
            num_test_samples: 4,
            sample_size: 25,
            splits: 1,
            epsilon: 1e-10,
            jitter: 0.01,
            em: EmConfig::default(),
            seed: 0,
        }
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::new(GraphSource::File(PathBuf::new()), None);
        let mut has_train = false;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| HrgError::Parse { line: i + 1, message: format!("expected key=value, got {line:?}") })?;
            let key = key.trim();
            has_train |= key == "train";
            cfg.set(key, value.trim()).map_err(|e| HrgError::Parse { line: i + 1, message: e.to_string() })?;
        }
        if !has_train {
            return Err(HrgError::Config("config has no train source".into()));
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| HrgError::Config(format!("bad value {value:?} for {key}")))
        }
        match key {
            "train" => self.train_source = value.parse()?,
            "test" => self.test_source = Some(value.parse()?),
            "mode" => self.mode = value.parse()?,
            "train_samples" => self.num_train_samples = num(key, value)?,
            "test_samples" => self.num_test_samples = num(key, value)?,
            "sample_size" => self.sample_size = num(key, value)?,
            "splits" => self.splits = num(key, value)?,
            "epsilon" => self.epsilon = num(key, value)?,
            "jitter" => self.jitter = num(key, value)?,
            "em_max_iterations" => self.em.max_iterations = num(key, value)?,
            "em_rel_tolerance" => self.em.rel_tolerance = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            _ => return Err(HrgError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn check(&self) -> Result<()> {
        if self.num_train_samples == 0 || self.num_test_samples < 2 || self.sample_size < 2 || self.splits == 0 {
            return Err(HrgError::Config(format!(
                "need train_samples >= 1, test_samples >= 2, sample_size >= 2, splits >= 1 (got {}, {}, {}, {})",
                self.num_train_samples, self.num_test_samples, self.sample_size, self.splits
            )));
        }
        if self.mode == Mode::CrossGraph && self.test_source.is_none() {
            return Err(HrgError::Config("cross-graph mode needs a test source".into()));
        }
        Ok(())
    }
}

/// Seeded uniform bisection of the node set; returns the induced halves.
pub fn bisect(graph: &Graph, seed: u64) -> (Graph, Graph) {
    let mut nodes: Vec<NodeId> = graph.nodes().collect();
    nodes.shuffle(&mut seeded_rng(seed));
    let (a, b) = nodes.split_at(nodes.len() / 2);
    (graph.induced_subgraph(&a.iter().copied().collect()), graph.induced_subgraph(&b.iter().copied().collect()))
}

fn samples(graph: &Graph, count: usize, size: usize, seed: u64, stream: u64) -> Result<Vec<Graph>> {
    (0..count).into_par_iter().map(|k| sample_subgraph(graph, size, derive_seed(seed, stream, k as u64))).collect()
}

#[derive(Clone, Debug)]
pub struct Timer {
    stages: Vec<(String, f64)>,
    last: Instant,
}

impl Timer {
    fn new() -> Self {
        Self { stages: Vec::new(), last: Instant::now() }
    }

    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        self.stages.push((stage.to_string(), (now - self.last).as_secs_f64()));
        self.last = now;
    }
}

/// Training derivations, test graphs and the merged unsplit grammar.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub train_derivations: Vec<Derivation>,
    pub test_graphs: Vec<Graph>,
    pub base_grammar: Grammar,
    pub stage_seconds: Vec<(String, f64)>,
}

pub fn prepare_corpus(cfg: &ExperimentConfig) -> Result<Corpus> {
    cfg.check()?;
    let mut timer = Timer::new();
    let (train_graph, test_graph) = match cfg.mode {
        Mode::CrossGraph => {
            let test = cfg.test_source.as_ref().expect("checked");
            (cfg.train_source.load(derive_seed(cfg.seed, 3, 0))?, test.load(derive_seed(cfg.seed, 4, 0))?)
        }
        Mode::DisjointPartition => {
            bisect(&cfg.train_source.load(derive_seed(cfg.seed, 3, 0))?, derive_seed(cfg.seed, 5, 0))
        }
    };
    timer.lap("load");
    let train = samples(&train_graph, cfg.num_train_samples, cfg.sample_size, cfg.seed, 1)?;
    let test_graphs = samples(&test_graph, cfg.num_test_samples, cfg.sample_size, cfg.seed, 2)?;
    timer.lap("sample");
    let train_derivations = train.par_iter().map(derive).collect::<Result<Vec<_>>>()?;
    timer.lap("decompose_extract");
    let counts: Vec<Grammar> = train_derivations.iter().map(Grammar::from_derivation).collect();
    let base_grammar = merge_counts(&counts)?.normalize()?;
    timer.lap("merge");
    Ok(Corpus { train_derivations, test_graphs, base_grammar, stage_seconds: timer.stages })
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentReport {
    pub splits: usize,
    pub scores: Vec<SmoothingReport>,
    pub mean_log_likelihood: f64,
    pub ci95: f64,
    pub grammar_size: usize,
    pub unknown_rule_types: usize,
    pub unknown_rule_uses: usize,
    /// Log of the epsilon actually used: the configured value, capped at a
    /// tenth of the smallest trained probability.
    pub log_epsilon: f64,
    pub smoothing_failed: bool,
    pub train_trace: Vec<f64>,
    /// Wall-clock seconds per stage; not part of the serialized report.
    #[serde(skip)]
    pub stage_seconds: Vec<(String, f64)>,
    #[serde(skip)]
    pub grammar: Grammar,
}

impl ExperimentReport {
    /// Per-graph score lines followed by one summary line. Deterministic
    /// for a fixed config (timings are excluded).
    pub fn to_json_lines(&self) -> String {
        let mut s = String::new();
        for r in &self.scores {
            s.push_str(&r.to_json_line());
            s.push('\n');
        }
        let summary = serde_json::json!({
            "splits": self.splits,
            "mean": self.mean_log_likelihood,
            "ci95": self.ci95,
            "grammar_size": self.grammar_size,
            "unknown_types": self.unknown_rule_types,
            "unknown_uses": self.unknown_rule_uses,
            "log_epsilon": self.log_epsilon,
            "smoothing_failed": self.smoothing_failed,
        });
        s.push_str(&summary.to_string());
        s.push('\n');
        s
    }

    /// `stage<TAB>seconds` rows.
    pub fn timings_tsv(&self) -> String {
        let mut s = String::from("stage\tseconds\n");
        for (stage, secs) in &self.stage_seconds {
            let _ = writeln!(s, "{stage}\t{secs:.6}");
        }
        s
    }
}

/// Split, train and score on a prepared corpus with `n` subsymbols.
pub fn train_and_score(corpus: &Corpus, cfg: &ExperimentConfig, n: usize) -> Result<ExperimentReport> {
    let mut timer = Timer::new();
    let split_cfg = SplitConfig { n, jitter: cfg.jitter, seed: derive_seed(cfg.seed, 6, n as u64) };
    let split = split_grammar(&corpus.base_grammar, &split_cfg)?;
    timer.lap("split");
    let (grammar, train_trace) = em_train(&split, &corpus.train_derivations, &cfg.em)?;
    timer.lap("train");
    let scorer = Scorer::new(&grammar)?;
    let log_epsilon = cfg.epsilon.ln().min(scorer.min_log_probability() - 10f64.ln());
    let scores = corpus.test_graphs.par_iter().map(|g| scorer.score_log(g, log_epsilon)).collect::<Result<Vec<_>>>()?;
    let summary = TestsetSummary::from_reports(scores)?;
    timer.lap("score");
    let mut stage_seconds = corpus.stage_seconds.clone();
    stage_seconds.extend(timer.stages);
    Ok(ExperimentReport {
        splits: n,
        mean_log_likelihood: summary.mean,
        ci95: summary.ci95,
        grammar_size: grammar.rule_count(),
        unknown_rule_types: summary.reports.iter().map(|r| r.unknown_rule_types).sum(),
        unknown_rule_uses: summary.reports.iter().map(|r| r.unknown_rule_uses).sum(),
        log_epsilon,
        smoothing_failed: summary.reports.iter().all(|r| !r.adjusted_log_likelihood.is_finite()),
        scores: summary.reports,
        train_trace,
        stage_seconds,
        grammar,
    })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    train_and_score(&prepare_corpus(cfg)?, cfg, cfg.splits)
}

/// Runs one experiment per split count over a shared corpus.
pub fn run_sweep(cfg: &ExperimentConfig, splits: &[usize]) -> Result<Vec<ExperimentReport>> {
    let corpus = prepare_corpus(cfg)?;
    splits.iter().map(|&n| train_and_score(&corpus, cfg, n)).collect()
}

/// Rules with probability at least `min_probability` and at most
/// `max_externals` external nodes, sorted by left-hand side and then by
/// descending probability.
pub fn dump_grammar(grammar: &Grammar, min_probability: f64, max_externals: usize) -> String {
    let mut rules: Vec<Rule> =
        grammar.rules().filter(|r| r.weight >= min_probability && r.lhs.arity <= max_externals).collect();
    rules.sort_by(|a, b| a.lhs.cmp(&b.lhs).then(b.weight.total_cmp(&a.weight)).then_with(|| a.rhs.cmp(&b.rhs)));
    rules.iter().map(|r| format!("{r}\n")).collect()
}
