//! `ntree` — command-line front end for the neural-tree library.
//!
//! Every subcommand is a thin adapter over one library entry point: it reads
//! its input documents, calls the library, and prints the library's result in
//! a machine-readable form (JSON or CSV) on standard output. Human-oriented
//! summaries go to standard error through the logger, controlled by the
//! `NT_LOG` environment variable (`error`, `info`, or `debug`; default
//! `error`).
//!
//! Exit codes:
//! - `0` — success.
//! - `1` — inputs decoded but failed validation; a JSON diagnostic naming
//!   the subcommand and the error is printed to standard error.
//! - `2` — usage error: unknown flags, unreadable files, or documents that
//!   do not decode. Nothing is written on this path.
//!
//! Output files are written atomically (temp file + rename), so a failing
//! run never leaves a partial file behind.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use neural_tree::graph::{dataset_from_jsonl, dataset_to_jsonl, Graph, GraphError, NodeId};
use neural_tree::htree::{build_htree, htree_stats, param_bound_corollary, param_bound_theorem};
use neural_tree::nn::ModelConfig;
use neural_tree::pgm::{brute_force_marginals, junction_tree_marginals, DiscretePgm, PgmError};
use neural_tree::pipeline::{
    experiment_curves, generate_synthetic, train_with_model, Architecture, Dataset,
    ExperimentConfig, GenerateSpec, SplitSpec, TrainConfig, TrainSettings,
};
use neural_tree::subsample::sample_bounded_treewidth;
use neural_tree::treedecomp::{junction_tree, width, BagId, TreeDecomposition};
use serde::{Deserialize, Serialize};

// ---------------------------------------------------------------------------
// Command line
// ---------------------------------------------------------------------------

#[derive(Parser)]
#[command(name = "ntree", version, about = "Neural trees for learning on graphs")]
struct Cli {
    /// Cap the worker-thread count for parallel work (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute a tree decomposition of a graph; JSON to stdout.
    Decompose {
        /// Graph document (JSON).
        graph: PathBuf,
    },
    /// Build the hierarchical message-passing tree of a graph; JSON to stdout.
    Htree {
        /// Graph document (JSON).
        graph: PathBuf,
    },
    /// Parameter-count bounds for approximating a compatible function on this
    /// graph to accuracy eps; JSON to stdout.
    Bound {
        /// Target sup-norm approximation accuracy, in (0, 1].
        #[arg(long)]
        eps: f64,
        /// Graph document (JSON).
        graph: PathBuf,
    },
    /// Drop edges until the graph's certified decomposition width is at most
    /// k; JSON (subgraph + decomposition + dropped edges) to stdout.
    Sample {
        /// Width bound for the sampled subgraph's decomposition.
        #[arg(long)]
        k: usize,
        /// Seed for the randomized edge order.
        #[arg(long)]
        seed: u64,
        /// Graph document (JSON).
        graph: PathBuf,
    },
    /// Validate a discrete model document; JSON report to stdout. When the
    /// joint state space is small, exact marginals are computed two ways and
    /// their largest deviation is reported.
    PgmCheck {
        /// Model document (JSON: cliques, tables, domain).
        model: PathBuf,
    },
    /// Generate a synthetic dataset with default parameters for the chosen
    /// kind; JSON-lines file to --output, receipt JSON to stdout.
    Generate {
        /// Task kind: pgm_labels, scene_like, or regression_theorem2.
        #[arg(long)]
        kind: String,
        /// Seed for all randomness in the dataset.
        #[arg(long)]
        seed: u64,
        /// Destination path for the dataset (JSON lines, one graph each).
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Train a model on a dataset; report JSON to stdout.
    Train {
        /// Training job document (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Dataset (JSON lines, one graph each).
        dataset: PathBuf,
        /// If set, write the best parameters here as a checkpoint document.
        #[arg(long)]
        save_model: Option<PathBuf>,
    },
    /// Run a configured accuracy-curve experiment; CSV to stdout.
    Experiment {
        /// Experiment document (JSON).
        #[arg(long)]
        config: PathBuf,
    },
}

// ---------------------------------------------------------------------------
// Errors and exit codes
// ---------------------------------------------------------------------------

enum CliError {
    /// Wrong invocation or an input that does not decode: exit 2, nothing
    /// written.
    Usage(String),
    /// Inputs decoded but the work itself failed validation: exit 1 with a
    /// JSON diagnostic on standard error.
    Failed { command: &'static str, message: String },
}

impl CliError {
    fn failed(command: &'static str, err: impl std::fmt::Display) -> Self {
        CliError::Failed { command, message: err.to_string() }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // clap prints its own message and distinguishes usage errors (2)
        // from --help/--version display (0).
        Err(e) => e.exit(),
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("NT_LOG", "error"))
        .format_timestamp(None)
        .init();

    match run(cli) {
        Ok(stdout_payload) => {
            print!("{stdout_payload}");
            ExitCode::SUCCESS
        }
        Err(CliError::Usage(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
        Err(CliError::Failed { command, message }) => {
            eprintln!(
                "{}",
                serde_json::json!({ "command": command, "error": message })
            );
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<String, CliError> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        // Ignore "already initialized": tests drive run() repeatedly in one
        // process and the pool can only be configured once.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    match cli.command {
        Command::Decompose { graph } => cmd_decompose(&graph),
        Command::Htree { graph } => cmd_htree(&graph),
        Command::Bound { eps, graph } => cmd_bound(eps, &graph),
        Command::Sample { k, seed, graph } => cmd_sample(k, seed, &graph),
        Command::PgmCheck { model } => cmd_pgm_check(&model),
        Command::Generate { kind, seed, output } => cmd_generate(&kind, seed, &output),
        Command::Train { config, dataset, save_model } => {
            cmd_train(&config, &dataset, save_model.as_deref())
        }
        Command::Experiment { config } => cmd_experiment(&config),
    }
}

// ---------------------------------------------------------------------------
// Input/output plumbing
// ---------------------------------------------------------------------------

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

/// Checks an output destination before any work begins, so a long run cannot
/// end in an unwritable path.
fn ensure_writable_dir(path: &Path) -> Result<(), CliError> {
    let dir = parent_dir(path);
    if fs::metadata(dir).map(|m| m.is_dir()).unwrap_or(false) {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "output directory {} does not exist",
            dir.display()
        )))
    }
}

fn parent_dir(path: &Path) -> &Path {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    }
}

/// Atomic write: the content lands under the final name only once it is
/// complete, via a temp file in the same directory and a rename.
fn write_atomic(path: &Path, content: &str) -> Result<(), CliError> {
    let io_err = |e: &dyn std::fmt::Display| {
        CliError::Usage(format!("cannot write {}: {e}", path.display()))
    };
    let mut tmp =
        tempfile::NamedTempFile::new_in(parent_dir(path)).map_err(|e| io_err(&e))?;
    tmp.write_all(content.as_bytes()).map_err(|e| io_err(&e))?;
    tmp.persist(path).map_err(|e| io_err(&e))?;
    Ok(())
}

fn load_graph(path: &Path, command: &'static str) -> Result<Graph, CliError> {
    let text = read_file(path)?;
    Graph::from_json_str(&text).map_err(|e| match e {
        GraphError::Decode(msg) => CliError::Usage(format!("{}: {msg}", path.display())),
        other => CliError::failed(command, other),
    })
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

/// The documented decomposition serialization: bag id → members, tree edges,
/// width.
#[derive(Serialize)]
struct DecompositionDoc {
    bags: BTreeMap<String, Vec<NodeId>>,
    edges: Vec<(BagId, BagId)>,
    width: usize,
}

fn decomposition_doc(td: &TreeDecomposition, command: &'static str) -> Result<DecompositionDoc, CliError> {
    let w = width(td).map_err(|e| CliError::failed(command, e))?;
    let bags = td
        .bags()
        .iter()
        .enumerate()
        .map(|(id, bag)| (id.to_string(), bag.as_slice().to_vec()))
        .collect();
    let mut edges: Vec<(BagId, BagId)> = td.tree_edges().collect();
    edges.sort_unstable();
    Ok(DecompositionDoc { bags, edges, width: w })
}

fn cmd_decompose(graph: &Path) -> Result<String, CliError> {
    let g = load_graph(graph, "decompose")?;
    let td = junction_tree(&g);
    let doc = decomposition_doc(&td, "decompose")?;
    log::info!("junction tree: {} bags, width {}", td.num_bags(), doc.width);
    Ok(format!(
        "{}\n",
        serde_json::to_string(&doc).expect("decomposition serialization cannot fail")
    ))
}

fn cmd_htree(graph: &Path) -> Result<String, CliError> {
    let g = load_graph(graph, "htree")?;
    let h = build_htree(&g).map_err(|e| CliError::failed("htree", e))?;
    let stats = htree_stats(&h);
    log::info!(
        "h-tree: {} nodes ({} leaves), depth {}, diameter {}",
        stats.num_nodes,
        stats.num_leaves,
        stats.depth,
        stats.diameter
    );
    Ok(format!("{}\n", h.to_json_string()))
}

fn cmd_bound(eps: f64, graph: &Path) -> Result<String, CliError> {
    let g = load_graph(graph, "bound")?;
    let h = build_htree(&g).map_err(|e| CliError::failed("bound", e))?;
    let theorem = param_bound_theorem(&h, eps).map_err(|e| CliError::failed("bound", e))?;
    let tw = width(&junction_tree(&g)).map_err(|e| CliError::failed("bound", e))?;
    let corollary =
        param_bound_corollary(g.num_nodes(), tw, eps).map_err(|e| CliError::failed("bound", e))?;
    log::info!(
        "eps {eps}: theorem bound {theorem}, corollary bound {corollary} (width {tw})"
    );
    #[derive(Serialize)]
    struct BoundDoc {
        eps: f64,
        num_nodes: usize,
        decomposition_width: usize,
        theorem_bound: f64,
        corollary_bound: f64,
    }
    let doc = BoundDoc {
        eps,
        num_nodes: g.num_nodes(),
        decomposition_width: tw,
        theorem_bound: theorem,
        corollary_bound: corollary,
    };
    Ok(format!(
        "{}\n",
        serde_json::to_string(&doc).expect("bound serialization cannot fail")
    ))
}

fn cmd_sample(k: usize, seed: u64, graph: &Path) -> Result<String, CliError> {
    let g = load_graph(graph, "sample")?;
    let sampled =
        sample_bounded_treewidth(&g, k, seed).map_err(|e| CliError::failed("sample", e))?;
    let decomposition = decomposition_doc(&sampled.decomposition, "sample")?;
    log::info!(
        "kept {} of {} edges, certified width {}",
        sampled.subgraph.num_edges(),
        g.num_edges(),
        decomposition.width
    );
    #[derive(Serialize)]
    struct SampleDoc {
        width: usize,
        dropped_edges: Vec<(NodeId, NodeId)>,
        subgraph: serde_json::Value,
        decomposition: DecompositionDoc,
    }
    let subgraph_value = serde_json::from_str(&sampled.subgraph.to_json_string())
        .expect("graph serialization is valid JSON");
    let doc = SampleDoc {
        width: decomposition.width,
        dropped_edges: sampled.dropped_edges,
        subgraph: subgraph_value,
        decomposition,
    };
    Ok(format!(
        "{}\n",
        serde_json::to_string(&doc).expect("sample serialization cannot fail")
    ))
}

/// Joint state spaces up to this size get an exact marginal cross-check.
const MARGINAL_CHECK_STATES: u128 = 1 << 16;

fn cmd_pgm_check(model: &Path) -> Result<String, CliError> {
    let text = read_file(model)?;
    let pgm = DiscretePgm::from_json_str(&text).map_err(|e| match e {
        PgmError::Decode(msg) => CliError::Usage(format!("{}: {msg}", model.display())),
        other => CliError::failed("pgm-check", other),
    })?;
    let g = pgm.source_graph();
    let num_nodes = g.num_nodes();
    let num_cliques = pgm.function().cliques().len();

    let states = (0..num_nodes).try_fold(1u128, |acc, _| acc.checked_mul(pgm.domain() as u128));
    let marginal_max_dev = match states {
        Some(s) if s <= MARGINAL_CHECK_STATES => {
            let exact =
                brute_force_marginals(&pgm).map_err(|e| CliError::failed("pgm-check", e))?;
            let passed =
                junction_tree_marginals(&pgm).map_err(|e| CliError::failed("pgm-check", e))?;
            let dev = exact
                .iter()
                .flat_map(|(v, row)| row.iter().zip(&passed[v]).map(|(a, b)| (a - b).abs()))
                .fold(0.0f64, f64::max);
            Some(dev)
        }
        _ => None,
    };

    match marginal_max_dev {
        Some(dev) => log::info!(
            "model valid: {num_nodes} nodes, {num_cliques} cliques, marginal deviation {dev:.3e}"
        ),
        None => log::info!(
            "model valid: {num_nodes} nodes, {num_cliques} cliques (state space too large for a marginal cross-check)"
        ),
    }
    #[derive(Serialize)]
    struct PgmCheckDoc {
        valid: bool,
        num_nodes: usize,
        num_cliques: usize,
        domain: usize,
        /// Largest absolute disagreement between the two exact marginal
        /// algorithms; absent when the state space is too large to check.
        marginal_max_dev: Option<f64>,
    }
    let doc = PgmCheckDoc {
        valid: true,
        num_nodes,
        num_cliques,
        domain: pgm.domain(),
        marginal_max_dev,
    };
    Ok(format!(
        "{}\n",
        serde_json::to_string(&doc).expect("check serialization cannot fail")
    ))
}

fn cmd_generate(kind: &str, seed: u64, output: &Path) -> Result<String, CliError> {
    let spec = GenerateSpec::from_kind_str(kind).ok_or_else(|| {
        CliError::Usage(format!(
            "unknown kind {kind:?} (expected pgm_labels, scene_like, or regression_theorem2)"
        ))
    })?;
    ensure_writable_dir(output)?;
    let dataset = generate_synthetic(&spec, seed).map_err(|e| CliError::failed("generate", e))?;
    write_atomic(output, &dataset_to_jsonl(&dataset.graphs))?;
    log::info!("wrote {} graphs to {}", dataset.graphs.len(), output.display());
    Ok(format!(
        "{}\n",
        serde_json::json!({
            "kind": spec.kind_str(),
            "graphs": dataset.graphs.len(),
            "path": output.display().to_string(),
        })
    ))
}

/// The training job document: dataset handling (split, shuffle seed) plus
/// the library's training configuration, flattened into one file.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainJobConfig {
    model: ModelConfig,
    architecture: Architecture,
    #[serde(default)]
    settings: TrainSettings,
    /// Edge-subsample width bound for the neural tree (see the library's
    /// training configuration).
    #[serde(default)]
    treewidth_bound: Option<usize>,
    #[serde(default = "full_fraction")]
    train_fraction: f64,
    seed: u64,
    #[serde(default)]
    split: SplitSpec,
    /// Seed for the train/val/test shuffle; defaults to `seed`.
    #[serde(default)]
    dataset_seed: Option<u64>,
}

fn full_fraction() -> f64 {
    1.0
}

fn cmd_train(
    config: &Path,
    dataset: &Path,
    save_model: Option<&Path>,
) -> Result<String, CliError> {
    let config_text = read_file(config)?;
    let job: TrainJobConfig = serde_json::from_str(&config_text)
        .map_err(|e| CliError::Usage(format!("{}: {e}", config.display())))?;
    let dataset_text = read_file(dataset)?;
    let graphs = dataset_from_jsonl(&dataset_text).map_err(|e| match e {
        GraphError::Decode(msg) => CliError::Usage(format!("{}: {msg}", dataset.display())),
        other => CliError::failed("train", other),
    })?;
    if let Some(path) = save_model {
        ensure_writable_dir(path)?;
    }

    let data = Dataset {
        graphs,
        split: job.split,
        seed: job.dataset_seed.unwrap_or(job.seed),
    };
    let cfg = TrainConfig {
        model: job.model,
        architecture: job.architecture,
        settings: job.settings,
        treewidth_bound: job.treewidth_bound,
        train_fraction: job.train_fraction,
        seed: job.seed,
    };
    let (report, params) =
        train_with_model(&data, &cfg).map_err(|e| CliError::failed("train", e))?;

    for e in &report.epochs {
        log::debug!(
            "epoch {}: train loss {:.6}, val loss {:.6}",
            e.epoch,
            e.train_loss,
            e.val_loss
        );
    }
    log::info!(
        "trained {} epochs (best {}), final test loss {:.6}",
        report.epochs.len(),
        report.best_epoch,
        report.final_test_loss
    );
    if let Some(path) = save_model {
        write_atomic(path, &format!("{}\n", params.to_json_string()))?;
        log::info!("saved model parameters to {}", path.display());
    }
    Ok(format!("{}\n", report.to_json_string()))
}

fn cmd_experiment(config: &Path) -> Result<String, CliError> {
    let text = read_file(config)?;
    let cfg: ExperimentConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{}: {e}", config.display())))?;
    let dataset =
        generate_synthetic(&cfg.data, cfg.seed).map_err(|e| CliError::failed("experiment", e))?;
    let table =
        experiment_curves(&dataset, &cfg).map_err(|e| CliError::failed("experiment", e))?;
    log::info!(
        "{} grid points × {} repeats on {} graphs",
        cfg.grid.len(),
        cfg.repeats,
        dataset.graphs.len()
    );
    Ok(table.to_csv_string())
}
