use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use hrg_core::grammar::{merge_counts, Derivation, Grammar};
use hrg_core::graph::{edge_list_string, sample_subgraph, Graph};
use hrg_core::harness::{derive_seed, dump_grammar, run_sweep, ExperimentConfig, GraphSource};
use hrg_core::inference::{derive, generate_graph, generate_sized, mean_ci95, GenerationLimits, Scorer};
use hrg_core::latent::{em_train, split_grammar, trace_tsv, EmConfig, SplitConfig};
use hrg_core::metrics::{degree_distance, gcd, metrics_tsv};
use hrg_core::treedecomp::{binarize, decompose};

/// Hyperedge replacement grammars: extract, refine, score and sample.
#[derive(Parser)]
#[command(name = "hrg", version)]
struct Cli {
    /// Base seed; every random stage derives its own stream from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Output file (single-output commands) or directory (multi-file
    /// commands). Defaults to stdout where that makes sense.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic graph from `ba:<nodes>:<m>` or `ws:<nodes>:<k>:<p>`.
    Gen { spec: String },
    /// Connected random-walk samples of a graph.
    Sample {
        /// Edge-list path or generator spec.
        graph: String,
        #[arg(long, default_value_t = 25)]
        size: usize,
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
    /// Tree decomposition, one bag per line.
    Decompose {
        graph: String,
        /// Keep bags with more than two children.
        #[arg(long)]
        no_binarize: bool,
    },
    /// Normalized grammar from graphs, or from samples of one graph.
    Extract {
        #[arg(required = true)]
        graphs: Vec<String>,
        #[command(flatten)]
        sampling: Sampling,
    },
    /// Split nonterminals and run EM; writes grammar.txt and trace.tsv.
    Train {
        #[arg(long)]
        grammar: Option<PathBuf>,
        #[arg(required = true)]
        graphs: Vec<String>,
        #[command(flatten)]
        sampling: Sampling,
        #[arg(long, default_value_t = 2)]
        splits: usize,
        #[arg(long, default_value_t = 0.01)]
        jitter: f64,
        #[arg(long, default_value_t = 50)]
        max_iterations: usize,
        #[arg(long, default_value_t = 1e-4)]
        rel_tolerance: f64,
    },
    /// Smoothed log-likelihood of each graph, as JSON lines.
    Score {
        #[arg(long)]
        grammar: PathBuf,
        #[arg(required = true)]
        graphs: Vec<String>,
        #[arg(long, default_value_t = 1e-10)]
        epsilon: f64,
    },
    /// Random graphs derived from a grammar.
    Generate {
        #[arg(long)]
        grammar: PathBuf,
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// Retry until the node count is within `--tolerance` of this.
        #[arg(long)]
        target: Option<usize>,
        #[arg(long, default_value_t = 0)]
        tolerance: usize,
    },
    /// Degree distance and graphlet correlation distance as TSV.
    Metrics { first: String, second: String },
    /// Full protocol from a key=value config; writes report.jsonl,
    /// timings.tsv and per-split grammars and traces.
    Experiment {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Extra `key=value` overrides, applied after the config file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Comma-separated split counts; defaults to the config's `splits`.
        #[arg(long, value_delimiter = ',')]
        sweep: Vec<usize>,
    },
    /// Grammar rules filtered by probability and external-node count.
    DumpGrammar {
        grammar: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        min_prob: f64,
        #[arg(long, default_value_t = usize::MAX)]
        max_externals: usize,
    },
}

#[derive(Args)]
struct Sampling {
    /// Draw this many samples from each input graph instead of using the
    /// graphs whole.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, default_value_t = 25)]
    size: usize,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let seed = cli.seed;
    let out = cli.out.as_deref();
    match cli.command {
        Command::Gen { spec } => {
            let source: GraphSource = spec.parse()?;
            if !matches!(source, GraphSource::Generator(_)) {
                bail!("{spec:?} is not a generator spec");
            }
            emit(out, &edge_list_string(&source.load(seed)?))
        }
        Command::Sample { graph, size, count } => {
            let g = load(&graph, seed)?;
            let samples: Vec<Graph> = (0..count)
                .map(|k| sample_subgraph(&g, size, derive_seed(seed, 1, k as u64)))
                .collect::<hrg_core::Result<_>>()?;
            emit_graphs(out, "sample", &samples)
        }
        Command::Decompose { graph, no_binarize } => {
            let g = load(&graph, seed)?;
            let td = decompose(&g)?;
            let td = if no_binarize { td } else { binarize(&td) };
            emit(out, &td.dump())
        }
        Command::Extract { graphs, sampling } => {
            let derivations = derivations(&graphs, &sampling, seed)?;
            let counts: Vec<Grammar> = derivations.iter().map(Grammar::from_derivation).collect();
            emit(out, &merge_counts(&counts)?.normalize()?.to_text())
        }
        Command::Train { grammar, graphs, sampling, splits, jitter, max_iterations, rel_tolerance } => {
            let derivations = derivations(&graphs, &sampling, seed)?;
            let base = match grammar {
                Some(path) => read_grammar(&path)?,
                None => {
                    let counts: Vec<Grammar> = derivations.iter().map(Grammar::from_derivation).collect();
                    merge_counts(&counts)?.normalize()?
                }
            };
            let split =
                split_grammar(&base, &SplitConfig { n: splits, jitter, seed: derive_seed(seed, 6, splits as u64) })?;
            let em = EmConfig { max_iterations, rel_tolerance, seed };
            let (trained, trace) = em_train(&split, &derivations, &em)?;
            let dir = out.unwrap_or(Path::new("."));
            fs::create_dir_all(dir)?;
            write(&dir.join("grammar.txt"), &trained.to_text())?;
            write(&dir.join("trace.tsv"), &trace_tsv(&trace))
        }
        Command::Score { grammar, graphs, epsilon } => {
            let grammar = read_grammar(&grammar)?;
            let scorer = Scorer::new(&grammar)?;
            let log_epsilon = epsilon.ln().min(scorer.min_log_probability() - 10f64.ln());
            let mut text = String::new();
            let mut adjusted = Vec::new();
            for (k, g) in graphs.iter().enumerate() {
                let r = scorer.score_log(&load(g, derive_seed(seed, 4, k as u64))?, log_epsilon)?;
                adjusted.push(r.adjusted_log_likelihood);
                text.push_str(&r.to_json_line());
                text.push('\n');
            }
            if adjusted.len() >= 2 {
                let (mean, ci95) = mean_ci95(&adjusted);
                text.push_str(&format!("{}\n", serde_json::json!({ "mean": mean, "ci95": ci95 })));
            }
            emit(out, &text)
        }
        Command::Generate { grammar, count, target, tolerance } => {
            let grammar = read_grammar(&grammar)?;
            let limits = GenerationLimits::default();
            let graphs: Vec<Graph> = (0..count)
                .map(|k| {
                    let s = derive_seed(seed, 7, k as u64);
                    match target {
                        Some(t) => generate_sized(&grammar, t, tolerance, &limits, s),
                        None => generate_graph(&grammar, &limits, s),
                    }
                })
                .collect::<hrg_core::Result<_>>()?;
            emit_graphs(out, "generated", &graphs)
        }
        Command::Metrics { first, second } => {
            let a = load(&first, derive_seed(seed, 3, 0))?;
            let b = load(&second, derive_seed(seed, 4, 0))?;
            emit(out, &metrics_tsv(&[("degree_distance", degree_distance(&a, &b)?), ("gcd", gcd(&a, &b)?)]))
        }
        Command::Experiment { config, overrides, sweep } => {
            let mut cfg = match &config {
                Some(path) => {
                    ExperimentConfig::from_kv(&fs::read_to_string(path).with_context(|| path.display().to_string())?)?
                }
                None => ExperimentConfig::new("ba:3000:2".parse()?, Some("ba:3000:2".parse()?)),
            };
            cfg.seed = seed;
            for kv in &overrides {
                let (k, v) = kv.split_once('=').with_context(|| format!("expected KEY=VALUE, got {kv:?}"))?;
                cfg.set(k.trim(), v.trim())?;
            }
            let splits = if sweep.is_empty() { vec![cfg.splits] } else { sweep };
            let reports = run_sweep(&cfg, &splits)?;
            let dir = out.unwrap_or(Path::new("."));
            fs::create_dir_all(dir)?;
            let mut report = String::new();
            let mut timings = String::from("splits\tstage\tseconds\n");
            for r in &reports {
                report.push_str(&r.to_json_lines());
                for line in r.timings_tsv().lines().skip(1) {
                    timings.push_str(&format!("{}\t{line}\n", r.splits));
                }
                write(&dir.join(format!("grammar_n{}.txt", r.splits)), &r.grammar.to_text())?;
                write(&dir.join(format!("trace_n{}.tsv", r.splits)), &trace_tsv(&r.train_trace))?;
            }
            write(&dir.join("report.jsonl"), &report)?;
            write(&dir.join("timings.tsv"), &timings)?;
            for r in &reports {
                eprintln!(
                    "n={} rules={} mean={:.4} ci95={:.4}",
                    r.splits, r.grammar_size, r.mean_log_likelihood, r.ci95
                );
            }
            Ok(())
        }
        Command::DumpGrammar { grammar, min_prob, max_externals } => {
            emit(out, &dump_grammar(&read_grammar(&grammar)?, min_prob, max_externals))
        }
    }
}

fn load(source: &str, seed: u64) -> Result<Graph> {
    let source: GraphSource = source.parse()?;
    source.load(seed).with_context(|| format!("loading {source:?}"))
}

fn read_grammar(path: &Path) -> Result<Grammar> {
    let text = fs::read_to_string(path).with_context(|| path.display().to_string())?;
    Grammar::from_text(&text).with_context(|| path.display().to_string())
}

fn derivations(graphs: &[String], sampling: &Sampling, seed: u64) -> Result<Vec<Derivation>> {
    let mut out = Vec::new();
    for (i, source) in graphs.iter().enumerate() {
        let g = load(source, derive_seed(seed, 3, i as u64))?;
        match sampling.samples {
            Some(count) => {
                for k in 0..count {
                    let s = derive_seed(seed, 1, (i * count + k) as u64);
                    out.push(derive(&sample_subgraph(&g, sampling.size, s)?)?);
                }
            }
            None => out.push(derive(&g)?),
        }
    }
    Ok(out)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| path.display().to_string())
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => write(path, text),
        None => {
            io::stdout().lock().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

/// One graph goes to `--out` as a file; several go into `--out` as a
/// directory of numbered edge lists, or to stdout separated by blank lines.
fn emit_graphs(out: Option<&Path>, stem: &str, graphs: &[Graph]) -> Result<()> {
    match (out, graphs) {
        (Some(path), [g]) => write(path, &edge_list_string(g)),
        (Some(dir), _) => {
            fs::create_dir_all(dir)?;
            for (k, g) in graphs.iter().enumerate() {
                write(&dir.join(format!("{stem}_{k:04}.txt")), &edge_list_string(g))?;
            }
            Ok(())
        }
        (None, _) => emit(None, &graphs.iter().map(edge_list_string).collect::<Vec<_>>().join("\n")),
    }
}
