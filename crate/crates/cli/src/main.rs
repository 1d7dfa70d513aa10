//! `grandag` command-line front end: simulate data, learn a graph, score it,
//! run a hyperparameter search, or benchmark a whole suite.
//!
//! Every command exits nonzero on failure and prints a one-line JSON error
//! object on stderr.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use grandag::graph::{sample_er, sample_sf};
use grandag::hpsearch::{run_search, write_trial_table, PipelineRunner, SampledConfig, SearchSpace};
use grandag::io::{read_matrix_csv, write_matrix_csv, Checkpoint};
use grandag::linear::LinearConfig;
use grandag::metrics::{evaluate, Metric, MetricsReport};
use grandag::optim::write_trajectory_csv;
use grandag::pipeline::{run, Method, RunOutput};
use grandag::simul::{simulate, split_and_standardize, GenMeta, GenOptions, Scheme};
use grandag::{Dag, Dataset, TrainConfig};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

/// Environment variable naming the default output root.
const OUT_ENV: &str = "GRANDAG_OUT";
const RUN_CONFIG_FILE: &str = "run_config.json";

#[derive(Parser)]
#[command(name = "grandag", version, about = "Neural DAG structure learning toolkit")]
struct Cli {
    /// Worker threads for parallel sections (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a ground-truth graph and a data set from it.
    Generate(GenerateArgs),
    /// Learn a graph from a data CSV.
    Train(TrainArgs),
    /// Compare an estimated graph to the truth.
    Evaluate(EvaluateArgs),
    /// Random hyperparameter search scored on held-out likelihood.
    Hpsearch(HpsearchArgs),
    /// Generate, train and evaluate over several seeds and aggregate.
    Benchmark(BenchmarkArgs),
}

#[derive(Args, Clone)]
struct GraphArgs {
    #[arg(long, default_value = "gauss-anm")]
    scheme: Scheme,
    /// Random graph model: er or sf.
    #[arg(long, default_value = "er")]
    graph: GraphKind,
    #[arg(long, default_value_t = 10)]
    nodes: usize,
    /// Expected edge count (er) or nodes x attachments per node (sf).
    #[arg(long)]
    edges: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Training flags; each one overrides the corresponding default.
#[derive(Args, Clone, Default)]
struct TrainFlags {
    #[arg(long)]
    lr_first: Option<f64>,
    #[arg(long)]
    lr_rest: Option<f64>,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    edge_threshold: Option<f64>,
    #[arg(long)]
    eval_period: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    h_tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long)]
    no_standardize: bool,
    #[arg(long)]
    no_pns: bool,
    #[arg(long)]
    pns_threshold: Option<f64>,
    #[arg(long)]
    no_prune: bool,
    #[arg(long)]
    prune_cutoff: Option<f64>,
    #[arg(long)]
    time_budget_secs: Option<f64>,
    /// L1 coefficient of the linear baseline.
    #[arg(long)]
    l1: Option<f64>,
    /// Final coefficient threshold of the linear baseline.
    #[arg(long)]
    final_threshold: Option<f64>,
}

impl TrainFlags {
    fn apply(&self, t: &mut TrainConfig, l: &mut LinearConfig) {
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f.clone() { t.$f = v; })* };
        }
        set!(lr_first, lr_rest, hidden, edge_threshold, eval_period, patience, h_tol, max_iter);
        set!(train_fraction, pns_threshold, prune_cutoff);
        if self.time_budget_secs.is_some() {
            t.time_budget_secs = self.time_budget_secs;
        }
        t.standardize &= !self.no_standardize;
        t.pns &= !self.no_pns;
        t.prune &= !self.no_prune;
        if let Some(v) = self.l1 {
            l.l1_coeff = v;
        }
        if let Some(v) = self.final_threshold {
            l.final_threshold = v;
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Data CSV (n rows, d columns, no header).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run configuration JSON; its fields override command-line flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Ground-truth graph (edge list or adjacency CSV).
    #[arg(long = "true")]
    truth: PathBuf,
    /// Estimated graph, or `random` for an Erdős–Rényi draw with the truth's edge count.
    #[arg(long)]
    est: String,
    #[arg(long, default_value = "shd,shdc,sid", value_delimiter = ',')]
    metrics: Vec<Metric>,
    /// Seed of the random estimate.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct HpsearchArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "grandag")]
    method: Method,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Ground-truth graph; when given, the selected estimate is also scored.
    #[arg(long = "true")]
    truth: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Suite name `<er|sf><k>-d<nodes>`, e.g. er1-d10 (k expected edges per node).
    #[arg(long, default_value = "er1-d10")]
    suite: String,
    #[arg(long, default_value = "gauss-anm")]
    scheme: Scheme,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value = "grandag")]
    method: Method,
    /// Number of data sets; seeds are 0..k offset by --seed.
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
enum GraphKind {
    Er,
    Sf,
}

/// Failure reported as JSON on stderr.
#[derive(Debug)]
struct CliError {
    kind: &'static str,
    message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError {
            kind: "usage",
            message: message.into(),
        }
    }
}

impl From<grandag::Error> for CliError {
    fn from(e: grandag::Error) -> Self {
        use grandag::Error as E;
        let kind = match &e {
            E::InvalidInput(_) | E::DimensionMismatch { .. } | E::Parse(_) | E::ConstantColumn { .. } => "input",
            E::Cyclic(_) => "cyclic-graph",
            E::Generation { .. } => "generation",
            E::Numeric { .. } => "numeric",
            E::AllTrialsFailed => "search",
            E::Io(_) => "io",
            E::Json(_) => "json",
        };
        CliError {
            kind,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError {
            kind: "io",
            message: e.to_string(),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError {
            kind: "json",
            message: e.to_string(),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

/// Everything needed to reproduce a training run; written to every output
/// directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RunConfig {
    method: Method,
    data: Option<PathBuf>,
    output: Option<PathBuf>,
    seed: u64,
    train: TrainConfig,
    linear: LinearConfig,
    version: String,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(&CliError::usage(e.to_string().trim().to_string())),
    };
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
        return fail(&CliError::usage(e.to_string()));
    }
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Hpsearch(a) => cmd_hpsearch(a),
        Command::Benchmark(a) => cmd_benchmark(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}

fn fail(e: &CliError) -> ExitCode {
    eprintln!("{}", json!({ "error": e.kind, "message": e.message }));
    ExitCode::FAILURE
}

/// Explicit `--out`, else `$GRANDAG_OUT/<name>`, else `runs/<name>`.
fn output_dir(explicit: Option<PathBuf>, name: &str) -> PathBuf {
    explicit.unwrap_or_else(|| {
        std::env::var_os(OUT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"))
            .join(name)
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::from(e).context(path))
}

impl CliError {
    fn context(mut self, path: &Path) -> Self {
        self.message = format!("{}: {}", path.display(), self.message);
        self
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::from(e).context(path))
}

fn read_graph(path: &Path) -> CliResult<Dag> {
    Dag::parse_any(&read_text(path)?).map_err(|e| CliError::from(e).context(path))
}

fn read_data(path: &Path) -> CliResult<DMatrix<f64>> {
    let file = fs::File::open(path).map_err(|e| CliError::from(e).context(path))?;
    read_matrix_csv(file).map_err(|e| CliError::from(e).context(path))
}

// ---------------------------------------------------------------- generate

#[derive(Serialize, Deserialize)]
struct DatasetMeta {
    scheme: Scheme,
    graph: GraphKind,
    nodes: usize,
    edges_requested: usize,
    edges: usize,
    samples: usize,
    seed: u64,
    data_file: String,
    truth_file: String,
    /// Scale-free only: nodes that attached fewer edges than requested
    /// because too few earlier nodes existed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sf_capped_nodes: Option<usize>,
    generation: GenMeta,
}

/// Graph and data for one seed, derived deterministically from it.
fn simulate_dataset(g: &GraphArgs, seed: u64) -> CliResult<(Dag, grandag::Simulation, usize)> {
    if g.nodes < 2 {
        return Err(CliError::usage("--nodes must be at least 2"));
    }
    if g.samples < 2 {
        return Err(CliError::usage("--samples must be at least 2"));
    }
    let edges = g.edges.unwrap_or(g.nodes);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dag = match g.graph {
        GraphKind::Er => {
            if edges > g.nodes * (g.nodes - 1) / 2 {
                return Err(CliError::usage(format!("--edges {edges} exceeds the maximum for {} nodes", g.nodes)));
            }
            sample_er(g.nodes, edges as f64, &mut rng)?
        }
        GraphKind::Sf => {
            if edges % g.nodes != 0 || edges == 0 {
                return Err(CliError::usage("--graph sf needs --edges to be a positive multiple of --nodes"));
            }
            sample_sf(g.nodes, edges / g.nodes, &mut rng)?
        }
    };
    let sim = simulate(g.scheme, &dag, g.samples, seed, &GenOptions::default())?;
    Ok((dag, sim, edges))
}

fn write_dataset(dir: &Path, g: &GraphArgs, seed: u64) -> CliResult<(PathBuf, PathBuf)> {
    let (dag, sim, edges) = simulate_dataset(g, seed)?;
    fs::create_dir_all(dir).map_err(|e| CliError::from(e).context(dir))?;
    let data = dir.join("data.csv");
    let truth = dir.join("truth.txt");
    let mut buf = Vec::new();
    write_matrix_csv(&sim.x, &mut buf)?;
    fs::write(&data, buf)?;
    fs::write(&truth, dag.to_edge_list())?;
    let meta = DatasetMeta {
        scheme: g.scheme,
        graph: g.graph,
        nodes: g.nodes,
        edges_requested: edges,
        edges: dag.n_edges(),
        samples: g.samples,
        seed,
        data_file: "data.csv".into(),
        truth_file: "truth.txt".into(),
        sf_capped_nodes: match g.graph {
            GraphKind::Sf => Some(grandag::graph::sf_capped_nodes(g.nodes, edges / g.nodes)),
            GraphKind::Er => None,
        },
        generation: sim.meta,
    };
    write_json(&dir.join("meta.json"), &meta)?;
    Ok((data, truth))
}

fn cmd_generate(a: GenerateArgs) -> CliResult<()> {
    let dir = output_dir(a.out, &format!("data-{}-seed{}", a.graph.scheme, a.seed));
    write_dataset(&dir, &a.graph, a.seed)?;
    println!("{}", json!({ "out": dir }));
    Ok(())
}

// ---------------------------------------------------------------- train

/// Overlays `patch` onto `base`, recursing into objects.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Defaults, then flags, then the config file.
fn resolve_run_config(a: &TrainArgs) -> CliResult<RunConfig> {
    let mut train = TrainConfig::default();
    let mut linear = LinearConfig::default();
    a.flags.apply(&mut train, &mut linear);
    let seed = a.seed.unwrap_or(0);
    train.seed = seed;
    let from_flags = RunConfig {
        method: a.method.unwrap_or(Method::GranDag),
        data: a.data.clone(),
        output: a.out.clone(),
        seed,
        train,
        linear,
        version: env!("CARGO_PKG_VERSION").into(),
    };
    let Some(path) = &a.config else {
        return Ok(from_flags);
    };
    let patch: Value = serde_json::from_str(&read_text(path)?).map_err(|e| CliError::from(e).context(path))?;
    let mut merged = serde_json::to_value(&from_flags)?;
    merge(&mut merged, patch);
    let mut rc: RunConfig = serde_json::from_value(merged).map_err(|e| CliError::from(e).context(path))?;
    // A top-level seed in the file also seeds training.
    rc.train.seed = rc.seed;
    // The output directory of a rerun is the one asked for now.
    if a.out.is_some() {
        rc.output = a.out.clone();
    }
    Ok(rc)
}

fn load_dataset(path: &Path, cfg: &TrainConfig) -> CliResult<Dataset> {
    let x = read_data(path)?;
    if x.ncols() < 2 {
        return Err(CliError::usage(format!("{}: need at least two columns", path.display())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok(split_and_standardize(&x, cfg.train_fraction, cfg.standardize, &mut rng)?)
}

fn write_run_outputs(dir: &Path, rc: &RunConfig, out: &RunOutput, wall_secs: f64) -> CliResult<()> {
    write_json(&dir.join(RUN_CONFIG_FILE), rc)?;
    fs::write(dir.join("estimate.txt"), out.estimate.to_edge_list())?;
    fs::write(dir.join("thresholded.txt"), out.thresholded.to_edge_list())?;
    let mut traj = Vec::new();
    write_trajectory_csv(&out.record.trajectory, &mut traj)?;
    fs::write(dir.join("trajectory.csv"), traj)?;
    if let Some(p) = &out.pns {
        write_json(&dir.join("pns.json"), p)?;
    }
    if let Some(p) = &out.prune {
        write_json(&dir.join("prune.json"), p)?;
    }
    if let Some(s) = &out.stack {
        write_json(&dir.join("checkpoint.json"), &Checkpoint::from_stack(s))?;
    }
    if let Some(m) = &out.linear {
        write_json(&dir.join("linear_model.json"), m)?;
    }
    let summary = json!({
        "method": out.method,
        "termination": out.record.termination,
        "iterations": out.record.state.iter_total,
        "subproblems": out.record.state.t,
        "final_h": out.record.final_h,
        "lambda": out.record.state.lambda,
        "mu": out.record.state.mu,
        "edges_thresholded": out.thresholded.n_edges(),
        "edges": out.estimate.n_edges(),
        "pns_applied": out.pns.is_some(),
        "prune_applied": out.prune.is_some(),
        "wall_secs": wall_secs,
        "warnings": out.warnings,
    });
    write_json(&dir.join("summary.json"), &summary)
}

fn train_into(dir: &Path, rc: &RunConfig) -> CliResult<RunOutput> {
    let data = rc
        .data
        .as_deref()
        .ok_or_else(|| CliError::usage("no data file: pass --data or a config with \"data\""))?;
    rc.train.validate()?;
    let ds = load_dataset(data, &rc.train)?;
    fs::create_dir_all(dir).map_err(|e| CliError::from(e).context(dir))?;
    let start = Instant::now();
    let out = run(&ds, &rc.train, rc.method, &rc.linear)?;
    let mut rc = rc.clone();
    rc.train = out.config.clone();
    write_run_outputs(dir, &rc, &out, start.elapsed().as_secs_f64())?;
    for w in &out.warnings {
        eprintln!("{}", json!({ "warning": w }));
    }
    Ok(out)
}

fn cmd_train(a: TrainArgs) -> CliResult<()> {
    let mut rc = resolve_run_config(&a)?;
    let dir = output_dir(rc.output.clone(), &format!("train-{}-seed{}", rc.method, rc.seed));
    rc.output = Some(dir.clone());
    let out = train_into(&dir, &rc)?;
    println!(
        "{}",
        json!({ "out": dir, "edges": out.estimate.n_edges(), "termination": out.record.termination })
    );
    Ok(())
}

// ---------------------------------------------------------------- evaluate

fn score(truth: &Dag, est: &Dag, metrics: &[Metric]) -> CliResult<MetricsReport> {
    if truth.d() != est.d() {
        return Err(CliError::usage(format!(
            "graphs have different node counts ({} vs {})",
            truth.d(),
            est.d()
        )));
    }
    Ok(evaluate(truth, est, metrics)?)
}

fn cmd_evaluate(a: EvaluateArgs) -> CliResult<()> {
    let truth = read_graph(&a.truth)?;
    let mut provenance = serde_json::Map::new();
    provenance.insert("true".into(), json!(a.truth));
    let est = if a.est == "random" {
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        provenance.insert("est".into(), json!("random"));
        provenance.insert("random_seed".into(), json!(a.seed));
        provenance.insert("random_scheme".into(), json!("er"));
        sample_er(truth.d(), truth.n_edges() as f64, &mut rng)?
    } else {
        provenance.insert("est".into(), json!(a.est));
        read_graph(Path::new(&a.est))?
    };
    let mut report = score(&truth, &est, &a.metrics)?;
    provenance.insert("metrics".into(), json!(a.metrics));
    provenance.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
    report.provenance = provenance;
    if let Some(path) = &a.out {
        write_json(path, &report)?;
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

// ---------------------------------------------------------------- hpsearch

fn cmd_hpsearch(a: HpsearchArgs) -> CliResult<()> {
    let mut base = SampledConfig {
        train: TrainConfig::default(),
        linear: LinearConfig::default(),
    };
    a.flags.apply(&mut base.train, &mut base.linear);
    base.train.seed = a.seed;
    base.train.validate()?;
    let ds = load_dataset(&a.data, &base.train)?;
    let dir = output_dir(a.out, &format!("hpsearch-{}-seed{}", a.method, a.seed));
    fs::create_dir_all(&dir).map_err(|e| CliError::from(e).context(&dir))?;
    let space = SearchSpace::for_method(a.method);
    let runner = PipelineRunner {
        dataset: &ds,
        method: a.method,
    };
    let outcome = run_search(&runner, &space, &base, a.trials, a.seed)?;
    let mut table = Vec::new();
    write_trial_table(&outcome.trials, &mut table)?;
    fs::write(dir.join("trials.csv"), table)?;
    write_json(&dir.join("space.json"), &space)?;
    fs::write(dir.join("estimate.txt"), outcome.best_dag.to_edge_list())?;
    let best = outcome.best_record();
    let rc = RunConfig {
        method: a.method,
        data: Some(a.data.clone()),
        output: Some(dir.clone()),
        seed: best.seed,
        train: best.config.train.clone(),
        linear: best.config.linear.clone(),
        version: env!("CARGO_PKG_VERSION").into(),
    };
    write_json(&dir.join(RUN_CONFIG_FILE), &rc)?;
    let mut summary = json!({
        "out": dir,
        "best_trial": best.trial,
        "best_score": best.score,
        "trials": outcome.trials.len(),
        "failed": outcome.trials.iter().filter(|t| t.score.is_none()).count(),
    });
    if let Some(t) = &a.truth {
        let report = score(&read_graph(t)?, &outcome.best_dag, &[Metric::Shd, Metric::Sid])?;
        write_json(&dir.join("metrics.json"), &report)?;
        summary["metrics"] = serde_json::to_value(&report)?;
    }
    println!("{summary}");
    Ok(())
}

// ---------------------------------------------------------------- benchmark

/// `er1-d10` -> (Er, 1, 10).
fn parse_suite(s: &str) -> CliResult<(GraphKind, usize, usize)> {
    let bad = || CliError::usage(format!("suite {s:?} is not of the form er<k>-d<nodes> or sf<k>-d<nodes>"));
    let (head, nodes) = s.split_once("-d").ok_or_else(bad)?;
    let (kind, k) = if let Some(k) = head.strip_prefix("er") {
        (GraphKind::Er, k)
    } else if let Some(k) = head.strip_prefix("sf") {
        (GraphKind::Sf, k)
    } else {
        return Err(bad());
    };
    let k: usize = k.parse().map_err(|_| bad())?;
    let nodes: usize = nodes.parse().map_err(|_| bad())?;
    if k == 0 || nodes < 2 {
        return Err(bad());
    }
    Ok((kind, k, nodes))
}

#[derive(Serialize)]
struct SeedRow {
    seed: u64,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    shd: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    shd_c: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sid: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

/// Mean and sample standard deviation.
fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn cmd_benchmark(a: BenchmarkArgs) -> CliResult<()> {
    let (kind, k, nodes) = parse_suite(&a.suite)?;
    let graph = GraphArgs {
        scheme: a.scheme,
        graph: kind,
        nodes,
        edges: Some(k * nodes),
        samples: a.samples,
    };
    let root = output_dir(a.out, &format!("benchmark-{}-{}-{}", a.suite, a.scheme, a.method));
    fs::create_dir_all(&root).map_err(|e| CliError::from(e).context(&root))?;
    let metrics = [Metric::Shd, Metric::ShdC, Metric::Sid];
    let mut rows = Vec::new();
    for seed in a.seed..a.seed + a.seeds {
        let dir = root.join(format!("seed{seed}"));
        let attempt = (|| -> CliResult<MetricsReport> {
            let (data, truth) = write_dataset(&dir, &graph, seed)?;
            let mut train = TrainConfig {
                seed,
                ..TrainConfig::default()
            };
            let mut linear = LinearConfig::default();
            a.flags.apply(&mut train, &mut linear);
            let rc = RunConfig {
                method: a.method,
                data: Some(data),
                output: Some(dir.join("run")),
                seed,
                train,
                linear,
                version: env!("CARGO_PKG_VERSION").into(),
            };
            let out = train_into(&dir.join("run"), &rc)?;
            let mut report = score(&read_graph(&truth)?, &out.estimate, &metrics)?;
            report.provenance.insert("seed".into(), json!(seed));
            report.provenance.insert("suite".into(), json!(a.suite));
            write_json(&dir.join("metrics.json"), &report)?;
            Ok(report)
        })();
        let row = match attempt {
            Ok(r) => SeedRow {
                seed,
                status: "ok",
                shd: r.shd,
                shd_c: r.shd_c,
                sid: r.sid,
                error: None,
            },
            Err(e) => {
                eprintln!("{}", json!({ "seed": seed, "error": e.kind, "message": e.message }));
                SeedRow {
                    seed,
                    status: "failed",
                    shd: None,
                    shd_c: None,
                    sid: None,
                    error: Some(e.message),
                }
            }
        };
        rows.push(row);
    }
    let ok: Vec<&SeedRow> = rows.iter().filter(|r| r.status == "ok").collect();
    let mut aggregate = serde_json::Map::new();
    let mut table = String::from("metric,mean,std,n\n");
    type Pick = fn(&SeedRow) -> Option<usize>;
    let columns: [(&str, Pick); 3] = [("shd", |r| r.shd), ("shd_c", |r| r.shd_c), ("sid", |r| r.sid)];
    for (name, pick) in columns {
        let v: Vec<f64> = ok.iter().filter_map(|r| pick(r)).map(|x| x as f64).collect();
        if v.is_empty() {
            continue;
        }
        let (m, s) = mean_std(&v);
        aggregate.insert(name.into(), json!({ "mean": m, "std": s, "n": v.len() }));
        table.push_str(&format!("{name},{m},{s},{}\n", v.len()));
    }
    fs::write(root.join("aggregate.csv"), &table)?;
    let report = json!({
        "suite": a.suite,
        "scheme": a.scheme,
        "method": a.method,
        "samples": a.samples,
        "seeds": rows,
        "aggregate": aggregate,
    });
    write_json(&root.join("benchmark.json"), &report)?;
    for (name, v) in &aggregate {
        println!("{name:>6}: {:.1} ± {:.1}", v["mean"].as_f64().unwrap_or(f64::NAN), v["std"].as_f64().unwrap_or(f64::NAN));
    }
    println!("{}", json!({ "out": root, "ok": ok.len(), "failed": rows.len() - ok.len() }));
    if ok.is_empty() {
        return Err(CliError {
            kind: "benchmark",
            message: "every seed failed".into(),
        });
    }
    Ok(())
}
