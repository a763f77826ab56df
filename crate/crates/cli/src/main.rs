//! `semiflow` command-line driver.

mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use semiflow::config::{parse_assignment, read_flat, ConfigError, RunConfig};
use semiflow::data::Split;
use semiflow::dynamics::{frozen_flow, stationary_oracle, EnergyForm, Order, ParticleEnsemble};
use semiflow::nn::{init_params, Checkpoint, CheckpointError, NetSpec};
use semiflow::rng::{rng_for, tag};
use semiflow::search::record::{CsvSink, JsonlSink};
use semiflow::search::{self, evaluate, initial_incumbent, run_search, Outputs, SearchError};
use semiflow::semigraph::unit_graph;

use manifest::{Artifacts, RunManifest};

#[derive(Parser)]
#[command(name = "semiflow", version, about = "Particle gradient-flow architecture search")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run NASGD, NASAGD or the hill-climbing baseline.
    Search {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory.
        #[arg(long, default_value = "semiflow-out")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on one split of the configured dataset.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
    },
    /// Sweep the frozen-value particle dynamics over kappa, beta and gamma grids.
    DynamicsBench {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value = "semiflow-bench")]
        out: PathBuf,
    },
    /// Print the local graph built around a network.
    GraphDump {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Center network; a freshly initialized one when absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        round: usize,
    },
    /// Pretrain the initial network and save it.
    Pretrain {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value = "semiflow-out")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON file with flat dotted keys.
    #[arg(long, conflicts_with = "from_manifest")]
    config: Option<PathBuf>,
    /// Reuse the configuration snapshot of an earlier run.
    #[arg(long)]
    from_manifest: Option<PathBuf>,
    /// Override one key, e.g. `--set dynamics.kappa=4`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// nasgd | nasagd | hillclimb
    #[arg(long)]
    mode: Option<String>,
    /// blobs | two_spirals | path to a CSV file
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Treat a round timeout as fatal.
    #[arg(long)]
    strict: bool,
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn config(e: impl std::fmt::Display) -> Self {
        Failure { code: 2, msg: e.to_string() }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::config(e)
    }
}

impl From<CheckpointError> for Failure {
    fn from(e: CheckpointError) -> Self {
        Failure::config(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::config(e)
    }
}

impl From<SearchError> for Failure {
    fn from(e: SearchError) -> Self {
        let code = match &e {
            SearchError::Config(_) | SearchError::Data(_) | SearchError::Checkpoint(_) | SearchError::Io(_) => 2,
            SearchError::Divergence(_) => 3,
            SearchError::RoundTimeout { .. } => 4,
            _ => 1,
        };
        Failure { code, msg: e.to_string() }
    }
}

type CmdResult = Result<Value, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let res = match cli.cmd {
        Command::Search { cfg, out } => cmd_search(&cfg, &out),
        Command::Eval { cfg, checkpoint, split } => cmd_eval(&cfg, &checkpoint, split),
        Command::DynamicsBench { cfg, out } => cmd_dynamics_bench(&cfg, &out),
        Command::GraphDump { cfg, checkpoint, round } => cmd_graph_dump(&cfg, checkpoint.as_deref(), round),
        Command::Pretrain { cfg, out } => cmd_pretrain(&cfg, &out),
    };
    match res {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

/// Layers, lowest first: defaults, config file or manifest snapshot,
/// `SEMIFLOW_SEED`, `--set`, dedicated flags. A manifest snapshot already
/// carries its seed, so the environment is ignored with `--from-manifest`.
fn load_config(a: &ConfigArgs) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    if let Some(p) = &a.from_manifest {
        cfg = cfg.overlay(&RunManifest::read(p)?.config)?;
    }
    if let Some(p) = &a.config {
        cfg = cfg.overlay(&read_flat(p)?)?;
    }
    if a.from_manifest.is_none() {
        if let Ok(s) = std::env::var("SEMIFLOW_SEED") {
            let seed: u64 = s
                .trim()
                .parse()
                .map_err(|_| ConfigError::BadValue { key: "SEMIFLOW_SEED".into(), msg: format!("{s:?} is not an integer") })?;
            cfg.seed = seed;
        }
    }
    for s in &a.set {
        let (k, v) = parse_assignment(s)?;
        cfg = cfg.set(&k, v)?;
    }
    if let Some(m) = &a.mode {
        cfg = cfg.set("mode", json!(m))?;
    }
    if let Some(d) = &a.data {
        cfg = if d.ends_with(".csv") || Path::new(d).is_file() {
            cfg.set("data.source", json!("csv"))?.set("data.path", json!(d))?
        } else {
            cfg.set("data.source", json!(d))?
        };
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(w) = a.workers {
        cfg.workers = w;
    }
    if a.strict {
        cfg.strict = true;
    }
    Ok(cfg)
}

fn cmd_search(args: &ConfigArgs, out: &Path) -> CmdResult {
    let cfg = load_config(args)?;
    let data = cfg.dataset()?;
    let scfg = cfg.search_config();
    scfg.validate()?;
    std::fs::create_dir_all(out)?;
    let paths = Artifacts::in_dir(out);
    let mut manifest = RunManifest::start("search", &cfg, paths.clone());
    manifest.write(&paths.manifest)?;

    let mut metrics = CsvSink::create(&paths.metrics)?;
    let mut audit = JsonlSink::create(&paths.morphisms)?;
    let result = run_search(&scfg, &data, &mut Outputs { metrics: &mut metrics, audit: &mut audit, checkpoint: Some(&paths.best) })?;
    metrics.into_inner()?;

    manifest.finish();
    manifest.write(&paths.manifest)?;
    let mut summary = serde_json::to_value(&result).expect("result serializes");
    summary["seed"] = json!(cfg.seed);
    summary["outputs"] = serde_json::to_value(&paths).expect("paths serialize");
    Ok(summary)
}

fn cmd_eval(args: &ConfigArgs, checkpoint: &Path, split: Split) -> CmdResult {
    let cfg = load_config(args)?;
    let data = cfg.dataset()?;
    let (spec, params) = Checkpoint::load(checkpoint)?;
    if spec.input_dim != data.dim || spec.output_dim != data.n_classes {
        return Err(Failure::config(format!(
            "checkpoint expects {} inputs and {} classes, data has {} and {}",
            spec.input_dim, spec.output_dim, data.dim, data.n_classes
        )));
    }
    let m = evaluate(&spec, &params, &data, split)?;
    Ok(json!({ "split": split, "loss": m.loss, "accuracy": m.accuracy }))
}

fn cmd_dynamics_bench(args: &ConfigArgs, out: &Path) -> CmdResult {
    let cfg = load_config(args)?;
    let b = &cfg.bench;
    let n = b.values.len();
    if n == 0 || b.particles == 0 || b.kappa.is_empty() || b.beta.is_empty() || b.gamma.is_empty() {
        return Err(Failure::config("bench needs values, particles and nonempty kappa/beta/gamma grids"));
    }
    let graph = unit_graph((), std::iter::repeat_n((), n - 1), b.topology);
    std::fs::create_dir_all(out)?;
    let mut runs = Vec::new();
    let mut point = 0u64;
    for &kappa in &b.kappa {
        for &beta in &b.beta {
            for &gamma in &b.gamma {
                let params = semiflow::dynamics::DynamicsParams { kappa, beta, gamma, ..cfg.dynamics.clone() };
                params.validate().map_err(Failure::config)?;
                let counts: Vec<f64> = (0..n).map(|i| (b.particles / n + usize::from(i < b.particles % n)) as f64).collect();
                let ens = ParticleEnsemble::from_counts(counts, vec![false; n]);
                let mut rng = rng_for(cfg.seed, &[tag::BENCH, point]);
                let trace = frozen_flow(&graph, &b.values, ens, &params, b.tau, b.steps, &mut rng)
                    .map_err(|e| Failure::config(e.to_string()))?;
                let path = out.join(format!("bench_kappa{kappa}_beta{beta}_gamma{gamma}.csv"));
                write_trace(&path, &trace)?;
                let last = trace.f.last().expect("initial marginal").clone();
                let oracle = (params.order == Order::FirstOrder && params.form == EnergyForm::Power)
                    .then(|| stationary_oracle(&b.values, beta).ok())
                    .flatten();
                let l1 = oracle.as_ref().map(|o| o.iter().zip(&last).map(|(a, b)| (a - b).abs()).sum::<f64>());
                runs.push(json!({
                    "kappa": kappa,
                    "beta": beta,
                    "gamma": gamma,
                    "path": path,
                    "final_f": last,
                    "final_energy": trace.energy.last(),
                    "oracle_f": oracle,
                    "l1_to_oracle": l1,
                    "total_moved": trace.moved.iter().sum::<f64>(),
                }));
                point += 1;
            }
        }
    }
    Ok(json!({ "runs": runs }))
}

fn write_trace(path: &Path, trace: &semiflow::dynamics::FlowTrace) -> std::io::Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    let n = trace.f[0].len();
    let heads: Vec<String> = (0..n).map(|g| format!("f{g}")).collect();
    writeln!(w, "iter,energy,moved,{}", heads.join(","))?;
    for (k, f) in trace.f.iter().enumerate() {
        let moved = if k == 0 { 0.0 } else { trace.moved[k - 1] };
        let cells: Vec<String> = f.iter().map(f64::to_string).collect();
        writeln!(w, "{k},{},{moved},{}", trace.energy[k], cells.join(","))?;
    }
    w.flush()
}

fn cmd_graph_dump(args: &ConfigArgs, checkpoint: Option<&Path>, round: usize) -> CmdResult {
    let cfg = load_config(args)?;
    let data = cfg.dataset()?;
    let scfg = cfg.search_config();
    let (spec, params) = match checkpoint {
        Some(p) => Checkpoint::load(p)?,
        None => {
            let spec = NetSpec::new(data.dim, scfg.init_widths.clone(), data.n_classes);
            let params = init_params(&spec, &mut rng_for(scfg.seed, &[tag::INIT]));
            (spec, params)
        }
    };
    let (graph, _) = search::round_graph(&scfg, &spec, &params, &data, round)?;
    let dump = graph.dump(|c| (c.spec.digest(), c.spec.param_count()));
    Ok(serde_json::to_value(dump).expect("dump serializes"))
}

fn cmd_pretrain(args: &ConfigArgs, out: &Path) -> CmdResult {
    let cfg = load_config(args)?;
    let data = cfg.dataset()?;
    let scfg = cfg.search_config();
    scfg.validate()?;
    std::fs::create_dir_all(out)?;
    let inc = initial_incumbent(&scfg, &data)?;
    let path = out.join("pretrained.json");
    Checkpoint::save(&path, &inc.spec, &inc.params)?;
    let val = evaluate(&inc.spec, &inc.params, &data, Split::Val)?;
    Ok(json!({ "arch": inc.spec.to_string(), "val": val, "checkpoint": path }))
}
