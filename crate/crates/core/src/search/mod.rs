//! Outer search loops.
//!
//! NASGD and NASAGD grow a local graph of morphed children around the
//! incumbent, put the particles on the incumbent (one ghost on every child)
//! and run the first- or second-order dynamics until some child holds twice
//! the incumbent's particles. That child becomes the next incumbent. The
//! step-size clock runs across rounds without resetting. The search phase
//! ends when the dynamics budget is spent or the incumbent reaches the size
//! threshold, after which the incumbent is trained to convergence.
//!
//! The hill-climbing baseline instead trains every child for a fixed number
//! of epochs per cycle and keeps the one with the lowest validation loss.

pub mod record;
pub mod round;
pub mod train;

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{BatchStream, DataError, Dataset, DEFAULT_TRAIN_BATCH, DEFAULT_VAL_BATCH};
use crate::dynamics::{DynamicsError, DynamicsParams, NodeState, Order, Schedule, TrainRule};
use crate::morphisms::{build_local_graph, AuditRecord, Candidate, Constraints, LocalGraphConfig, MorphError, MorphMix};
use crate::nn::{init_params, Checkpoint, CheckpointError, NetParams, NetSpec, NnError};
use crate::objective::{NetObjective, Objective, ObjectiveError, ValTracker, DEFAULT_VAL_DECAY};
use crate::rng::{derive_seed, rng_for, tag};
use crate::semigraph::{ArchGraph, NodeId, Topology};

use record::{AuditSink, MetricsRow, MetricsSink};
pub use round::{drive_round, BatchSupply, NoiseSupply, RoundOutcome, RoundSpec, RunState, StopReason};
pub use train::{evaluate, final_train, pretrain, FinalConfig, FinalReport, Metrics, PretrainConfig};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("divergence: {0}")]
    Divergence(String),
    #[error("round {round} hit the iteration cap without doubling")]
    RoundTimeout { round: usize, fallback: Box<RoundReport> },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Morph(#[from] MorphError),
    #[error(transparent)]
    Dynamics(DynamicsError),
    #[error(transparent)]
    Objective(ObjectiveError),
    #[error(transparent)]
    Net(#[from] NnError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl From<ObjectiveError> for SearchError {
    fn from(e: ObjectiveError) -> Self {
        match e {
            ObjectiveError::NonFiniteValue(_) | ObjectiveError::NonFiniteGradient(_) => SearchError::Divergence(e.to_string()),
            other => SearchError::Objective(other),
        }
    }
}

impl From<DynamicsError> for SearchError {
    fn from(e: DynamicsError) -> Self {
        match e {
            DynamicsError::NonFiniteGradient(_) => SearchError::Divergence(e.to_string()),
            other => SearchError::Dynamics(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Nasgd,
    Nasagd,
    Hillclimb,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Nasgd => "nasgd",
            Mode::Nasagd => "nasagd",
            Mode::Hillclimb => "hillclimb",
        }
    }

    pub fn from_name(s: &str) -> Option<Mode> {
        [Mode::Nasgd, Mode::Nasagd, Mode::Hillclimb].into_iter().find(|m| m.name() == s)
    }

    /// Cycle budget used when none is configured.
    pub fn default_n_steps(self) -> f64 {
        match self {
            Mode::Nasgd => 0.89,
            Mode::Nasagd => 2.54,
            Mode::Hillclimb => 8.0,
        }
    }
}

/// Every hyperparameter of a search run.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    pub mode: Mode,
    /// Particles placed on the incumbent at the start of a round.
    pub particles: usize,
    pub n_neigh: usize,
    pub epochs_neigh: usize,
    /// Cycle budget; fractional values are allowed.
    pub n_steps: f64,
    /// Morphisms per child in the hill-climbing baseline.
    pub n_nm: usize,
    pub lam_start: f64,
    pub lam_final: f64,
    pub dynamics: DynamicsParams,
    pub rule: TrainRule,
    pub batch_train: usize,
    pub batch_val: usize,
    pub val_decay: f64,
    pub constraints: Constraints,
    pub mix: MorphMix,
    pub topology: Topology,
    /// The search phase stops once the incumbent has this many hidden layers.
    pub size_threshold: usize,
    /// Round cap, in units of `epochs_neigh` epochs.
    pub timeout_cycles: usize,
    pub init_widths: Vec<usize>,
    pub pretrain: PretrainConfig,
    pub final_train: FinalConfig,
    pub seed: u64,
    pub workers: usize,
    /// Treat a round timeout as fatal.
    pub strict: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig::for_mode(Mode::Nasgd)
    }
}

impl SearchConfig {
    pub fn for_mode(mode: Mode) -> Self {
        SearchConfig {
            mode,
            particles: 8,
            n_neigh: 8,
            epochs_neigh: 18,
            n_steps: mode.default_n_steps(),
            n_nm: 5,
            lam_start: 0.05,
            lam_final: 1e-7,
            dynamics: DynamicsParams { kappa: 32.0, beta: 8.0, ..Default::default() },
            rule: TrainRule::default(),
            batch_train: DEFAULT_TRAIN_BATCH,
            batch_val: DEFAULT_VAL_BATCH,
            val_decay: DEFAULT_VAL_DECAY,
            constraints: Constraints::default(),
            mix: MorphMix::default(),
            topology: Topology::Star,
            size_threshold: 4,
            timeout_cycles: 5,
            init_widths: vec![16, 16],
            pretrain: PretrainConfig::default(),
            final_train: FinalConfig::default(),
            seed: 0,
            workers: 1,
            strict: false,
        }
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        let bad = |m: &str| Err(SearchError::Config(m.to_string()));
        if self.particles == 0 {
            return bad("search.particles must be >= 1");
        }
        if self.n_neigh == 0 {
            return bad("search.n_neigh must be >= 1");
        }
        if self.epochs_neigh == 0 {
            return bad("search.epochs_neigh must be >= 1");
        }
        if !(self.n_steps > 0.0 && self.n_steps.is_finite()) {
            return bad("search.n_steps must be > 0");
        }
        if !(self.lam_start > self.lam_final && self.lam_final >= 0.0) {
            return bad("schedule needs lam_start > lam_final >= 0");
        }
        if self.batch_train == 0 || self.batch_val == 0 {
            return bad("batch sizes must be positive");
        }
        if !(self.val_decay > 0.0 && self.val_decay < 1.0) {
            return bad("val.decay must lie in (0, 1)");
        }
        if self.init_widths.is_empty() || self.init_widths.contains(&0) {
            return bad("init.widths needs at least one positive width");
        }
        if self.workers == 0 {
            return bad("workers must be >= 1");
        }
        if self.timeout_cycles == 0 {
            return bad("search.timeout_cycles must be >= 1");
        }
        self.mix.validate().map_err(SearchError::Config)?;
        self.dynamics.validate().map_err(|e| SearchError::Config(e.to_string()))
    }

    /// Dynamics parameters with the order implied by the mode.
    pub fn effective_dynamics(&self) -> DynamicsParams {
        let order = if self.mode == Mode::Nasagd { Order::SecondOrder } else { Order::FirstOrder };
        DynamicsParams { order, ..self.dynamics.clone() }
    }

    pub fn local_graph(&self, edits_per_child: usize, mix: MorphMix) -> LocalGraphConfig {
        LocalGraphConfig {
            n_neigh: self.n_neigh,
            edits_per_child,
            constraints: self.constraints,
            mix,
            topology: self.topology,
        }
    }

    /// Iterations in one restart cycle of the step-size schedule.
    pub fn cycle_iters(&self, batches_per_epoch: usize) -> usize {
        (self.epochs_neigh * batches_per_epoch).max(1)
    }

    /// Total iterations of dynamics the run may spend.
    pub fn budget_iters(&self, batches_per_epoch: usize) -> usize {
        (self.n_steps * (self.epochs_neigh * batches_per_epoch) as f64).floor() as usize
    }

    pub fn schedule(&self, batches_per_epoch: usize) -> Schedule {
        Schedule { lam_start: self.lam_start, lam_final: self.lam_final, period: self.cycle_iters(batches_per_epoch) }
    }

    pub fn round_spec(&self, round: usize, batches_per_epoch: usize) -> RoundSpec {
        RoundSpec {
            dynamics: self.effective_dynamics(),
            particles: self.particles,
            schedule: self.schedule(batches_per_epoch),
            rule: self.rule,
            val_decay: self.val_decay,
            round,
            max_iters: self.timeout_cycles * self.cycle_iters(batches_per_epoch),
            budget_end: self.budget_iters(batches_per_epoch),
        }
    }
}

/// Size of an architecture for the stopping threshold: its hidden-layer count.
pub fn arch_size(spec: &NetSpec) -> usize {
    spec.depth()
}

/// Current best architecture with its parameters and velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct Incumbent {
    pub spec: NetSpec,
    pub params: NetParams,
    pub velocity: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub iterations: usize,
    pub stop: StopReason,
    pub winner: usize,
    pub winner_arch: String,
    pub counts: Vec<f64>,
    pub restarts: usize,
    pub first_iter: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub incumbent: Incumbent,
    pub summary: RoundSummary,
}

/// Independent training and validation streams for every node of a round.
pub struct NetSupply {
    train: Vec<BatchStream>,
    val: Vec<BatchStream>,
}

impl NetSupply {
    pub fn new(data: &Dataset, nodes: usize, batch_train: usize, batch_val: usize, seed: u64, round: usize) -> Result<Self, SearchError> {
        let mk = |src: &[usize], b: usize, purpose: u64| -> Result<Vec<BatchStream>, SearchError> {
            (0..nodes)
                .map(|g| Ok(BatchStream::new(src.to_vec(), b, round::stream_seed(seed, round, g, purpose))?))
                .collect()
        };
        if !data.splits.is_disjoint() {
            return Err(SearchError::Config("train and validation splits intersect".into()));
        }
        Ok(NetSupply {
            train: mk(&data.splits.train, batch_train, tag::TRAIN_STREAM)?,
            val: mk(&data.splits.val, batch_val, tag::VAL_STREAM)?,
        })
    }
}

impl BatchSupply<NetObjective<'_>> for NetSupply {
    type Owned = Vec<usize>;

    fn train_batch(&mut self, g: usize) -> Vec<usize> {
        self.train[g].next_batch()
    }

    fn val_batch(&mut self, g: usize) -> Vec<usize> {
        self.val[g].next_batch()
    }
}

fn batches_per_epoch(data: &Dataset, cfg: &SearchConfig) -> Result<usize, SearchError> {
    let bpe = data.splits.train.len() / cfg.batch_train;
    if bpe == 0 {
        return Err(DataError::SplitTooSmall { split: "train", have: data.splits.train.len(), need: cfg.batch_train }.into());
    }
    if data.splits.val.len() < cfg.batch_val {
        return Err(DataError::SplitTooSmall { split: "val", have: data.splits.val.len(), need: cfg.batch_val }.into());
    }
    Ok(bpe)
}

fn probe_inputs(data: &Dataset, seed: u64, round: usize) -> Vec<f64> {
    use rand::seq::IndexedRandom;
    let mut rng = rng_for(seed, &[tag::PROBE, round as u64]);
    let rows: Vec<usize> = data.splits.train.choose_multiple(&mut rng, 64).copied().collect();
    data.gather(&rows).0
}

fn with_pool<T>(workers: usize, f: impl FnOnce(Option<&rayon::ThreadPool>) -> T) -> Result<T, SearchError> {
    if workers <= 1 {
        return Ok(f(None));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| SearchError::Config(format!("cannot start {workers} workers: {e}")))?;
    Ok(f(Some(&pool)))
}

/// Local graph of round `round` around a network, as NASGD / NASAGD builds it.
pub fn round_graph(
    cfg: &SearchConfig,
    spec: &NetSpec,
    params: &NetParams,
    data: &Dataset,
    round: usize,
) -> Result<(ArchGraph<Candidate>, Vec<AuditRecord>), SearchError> {
    let mut rng = rng_for(cfg.seed, &[tag::MORPH, round as u64]);
    let probe = probe_inputs(data, cfg.seed, round);
    Ok(build_local_graph(spec, params, &cfg.local_graph(1, cfg.mix.clone()), round, &probe, &mut rng)?)
}

/// One NASGD / NASAGD round around `inc`.
///
/// The children start at rest. Under NASAGD the incumbent keeps its velocity;
/// under NASGD it restarts at rest too.
pub fn run_round(
    inc: &Incumbent,
    cfg: &SearchConfig,
    data: &Dataset,
    round: usize,
    run: &mut RunState<'_>,
    audit: &mut dyn AuditSink,
) -> Result<RoundReport, SearchError> {
    let bpe = batches_per_epoch(data, cfg)?;
    let (graph, records) = round_graph(cfg, &inc.spec, &inc.params, data, round)?;
    for r in &records {
        audit.record(r)?;
    }
    let obj = NetObjective::new(graph.payloads().iter().map(|c| c.spec.clone()).collect(), data);
    let mut supply = NetSupply::new(data, graph.node_count(), cfg.batch_train, cfg.batch_val, cfg.seed, round)?;
    let states: Vec<NodeState> = graph
        .payloads()
        .iter()
        .enumerate()
        .map(|(g, c)| {
            if g == graph.center().index() && cfg.mode == Mode::Nasagd {
                NodeState { x: c.params.flat.clone(), v: inc.velocity.clone() }
            } else {
                NodeState::at_rest(c.params.flat.clone())
            }
        })
        .collect();
    let first_iter = run.clock;
    let out = drive_round(&obj, &mut supply, &graph, states, &cfg.round_spec(round, bpe), run)?;
    let report = adopt(&graph, out, round, first_iter);
    log::info!(
        "round {round}: {:?} after {} iterations, adopted node {} ({})",
        report.summary.stop,
        report.summary.iterations,
        report.summary.winner,
        report.summary.winner_arch
    );
    if report.summary.stop == StopReason::Timeout {
        return Err(SearchError::RoundTimeout { round, fallback: Box::new(report) });
    }
    Ok(report)
}

fn adopt(graph: &ArchGraph<Candidate>, mut out: RoundOutcome, round: usize, first_iter: usize) -> RoundReport {
    let w = out.winner;
    let cand = graph.payload(w);
    let state = std::mem::take(&mut out.states[w.index()]);
    RoundReport {
        incumbent: Incumbent { spec: cand.spec.clone(), params: NetParams { flat: state.x }, velocity: state.v },
        summary: RoundSummary {
            round,
            iterations: out.iterations,
            stop: out.stop,
            winner: w.index(),
            winner_arch: cand.spec.to_string(),
            counts: out.counts,
            restarts: out.restarts,
            first_iter,
        },
    }
}

/// Where a run writes its artifacts.
pub struct Outputs<'a> {
    pub metrics: &'a mut dyn MetricsSink,
    pub audit: &'a mut dyn AuditSink,
    /// Best-network checkpoint, rewritten at every round and final cycle.
    pub checkpoint: Option<&'a Path>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub mode: Mode,
    #[serde(skip)]
    pub best_spec: Option<NetSpec>,
    #[serde(skip)]
    pub best_params: NetParams,
    pub best_arch: String,
    pub rounds: usize,
    pub architectures_explored: usize,
    pub iterations: usize,
    pub pretrain_val: Metrics,
    pub final_report: FinalReport,
    pub round_log: Vec<RoundSummary>,
    pub search_secs: f64,
    pub wallclock: f64,
}

/// Fresh network from `init_widths`, pretrained.
pub fn initial_incumbent(cfg: &SearchConfig, data: &Dataset) -> Result<Incumbent, SearchError> {
    let spec = NetSpec::new(data.dim, cfg.init_widths.clone(), data.n_classes);
    let params = init_params(&spec, &mut rng_for(cfg.seed, &[tag::INIT]));
    let params = pretrain(&spec, &params, data, &cfg.pretrain, cfg.rule, cfg.seed)?;
    let velocity = vec![0.0; params.len()];
    Ok(Incumbent { spec, params, velocity })
}

fn save(out: &Outputs<'_>, spec: &NetSpec, params: &NetParams) -> Result<(), SearchError> {
    if let Some(p) = out.checkpoint {
        Checkpoint::save(p, spec, params)?;
    }
    Ok(())
}

fn finish(
    cfg: &SearchConfig,
    data: &Dataset,
    inc: Incumbent,
    out: &mut Outputs<'_>,
    pieces: (usize, usize, usize, Metrics, Vec<RoundSummary>),
    start: Instant,
) -> Result<SearchResult, SearchError> {
    let (rounds, explored, iterations, pretrain_val, round_log) = pieces;
    let search_secs = start.elapsed().as_secs_f64();
    let spec = inc.spec;
    let mut hook = |_: usize, p: &NetParams| save(out, &spec, p);
    let report = final_train(&spec, &inc.params, data, &cfg.final_train, cfg.rule, cfg.seed, &mut hook)?;
    save(out, &spec, &report.params)?;
    Ok(SearchResult {
        mode: cfg.mode,
        best_arch: spec.to_string(),
        best_params: report.params.clone(),
        best_spec: Some(spec),
        rounds,
        architectures_explored: explored,
        iterations,
        pretrain_val,
        final_report: report,
        round_log,
        search_secs,
        wallclock: start.elapsed().as_secs_f64(),
    })
}

/// Full NASGD / NASAGD run, or the baseline when `cfg.mode` is `Hillclimb`.
pub fn run_search(cfg: &SearchConfig, data: &Dataset, out: &mut Outputs<'_>) -> Result<SearchResult, SearchError> {
    cfg.validate()?;
    if cfg.mode == Mode::Hillclimb {
        return hill_climb_baseline(cfg, data, out);
    }
    let start = Instant::now();
    let bpe = batches_per_epoch(data, cfg)?;
    let budget = cfg.budget_iters(bpe);
    let mut inc = initial_incumbent(cfg, data)?;
    let pretrain_val = evaluate(&inc.spec, &inc.params, data, crate::data::Split::Val)?;
    save(out, &inc.spec, &inc.params)?;
    let mut log_rounds = Vec::new();
    let clock = with_pool(cfg.workers, |pool| -> Result<usize, SearchError> {
        let mut run = RunState { clock: 0, seed: cfg.seed, sink: &mut *out.metrics, pool };
        let mut round = 0;
        while run.clock < budget && arch_size(&inc.spec) < cfg.size_threshold {
            let report = match run_round(&inc, cfg, data, round, &mut run, &mut *out.audit) {
                Ok(r) => r,
                Err(SearchError::RoundTimeout { round, fallback }) if !cfg.strict => {
                    log::warn!("round {round} timed out; adopting the node with the most particles");
                    *fallback
                }
                Err(e) => return Err(e),
            };
            inc = report.incumbent;
            log_rounds.push(report.summary);
            if let Some(p) = out.checkpoint {
                Checkpoint::save(p, &inc.spec, &inc.params)?;
            }
            round += 1;
        }
        Ok(run.clock)
    })??;
    let rounds = log_rounds.len();
    let explored = cfg.n_neigh * rounds + 1;
    finish(cfg, data, inc, out, (rounds, explored, clock, pretrain_val, log_rounds), start)
}

/// Result of one hill-climbing cycle on a fixed graph.
#[derive(Debug, Clone, PartialEq)]
pub struct HillOutcome {
    /// Child with the lowest selection loss.
    pub winner: NodeId,
    pub selection: Vec<f64>,
    pub states: Vec<NodeState>,
}

/// Trains every child of `graph` (the center is left out) for `iters`
/// iterations on a fresh cosine schedule, then scores each child by its
/// mean loss over `select_batches` validation batches.
#[allow(clippy::too_many_arguments)]
pub fn hill_cycle<O, S, P>(
    obj: &O,
    supply: &mut S,
    graph: &ArchGraph<P>,
    mut states: Vec<NodeState>,
    schedule: Schedule,
    rule: TrainRule,
    iters: usize,
    select_batches: usize,
    val_decay: f64,
    round: usize,
    run: &mut RunState<'_>,
) -> Result<HillOutcome, SearchError>
where
    O: Objective + ?Sized,
    S: BatchSupply<O>,
{
    let center = graph.center();
    let n = graph.node_count();
    let children: Vec<usize> = graph.ids().filter(|&g| g != center).map(NodeId::index).collect();
    let mut tracker = ValTracker::new(n, val_decay);
    let sub = Subset { obj, nodes: &children };
    let mut active: Vec<NodeState> = children.iter().map(|&g| std::mem::take(&mut states[g])).collect();
    for k in 0..iters {
        let tau = schedule.tau(k);
        let batches: Vec<_> = children.iter().map(|&g| supply.train_batch(g)).collect();
        let v_train = round::step_all(&sub, &mut active, batches, tau, rule, run.pool)?;
        let val: Vec<_> = children.iter().map(|&g| supply.val_batch(g)).collect();
        let samples = round::eval_all(&sub, &active, val, run.pool)?;
        for (j, &g) in children.iter().enumerate() {
            let v = tracker.update(g, samples[j]);
            run.sink.row(&MetricsRow {
                iter: run.clock,
                round,
                node_id: g,
                count: 0.0,
                f: 0.0,
                v_train: v_train[j],
                v_val: v,
                phi: 0.0,
                tau_k: tau,
                energy: 0.0,
                moved: 0.0,
            })?;
        }
        run.sink.flush()?;
        run.clock += 1;
    }
    let mut selection = vec![f64::INFINITY; n];
    let mut totals = vec![0.0; children.len()];
    for _ in 0..select_batches.max(1) {
        let val: Vec<_> = children.iter().map(|&g| supply.val_batch(g)).collect();
        for (t, s) in totals.iter_mut().zip(round::eval_all(&sub, &active, val, run.pool)?) {
            *t += s;
        }
    }
    for (j, &g) in children.iter().enumerate() {
        selection[g] = totals[j] / select_batches.max(1) as f64;
    }
    for (&g, st) in children.iter().zip(active) {
        states[g] = st;
    }
    let winner = children
        .iter()
        .copied()
        .fold(None, |best: Option<usize>, g| match best {
            Some(b) if selection[b] <= selection[g] => Some(b),
            _ => Some(g),
        })
        .expect("at least one child");
    Ok(HillOutcome { winner: graph.node(winner).expect("valid id"), selection, states })
}

/// View of an objective restricted to a subset of its nodes.
struct Subset<'a, O: ?Sized> {
    obj: &'a O,
    nodes: &'a [usize],
}

impl<O: Objective + ?Sized> Objective for Subset<'_, O> {
    type Batch = O::Batch;

    fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn dim(&self, g: usize) -> usize {
        self.obj.dim(self.nodes[g])
    }

    fn value(&self, x: &[f64], g: usize, batch: &Self::Batch) -> Result<f64, ObjectiveError> {
        self.obj.value(x, self.nodes[g], batch)
    }

    fn value_and_grad(&self, x: &[f64], g: usize, batch: &Self::Batch) -> Result<(f64, Vec<f64>), ObjectiveError> {
        self.obj.value_and_grad(x, self.nodes[g], batch)
    }
}

/// Simplified hill climbing: `ceil(n_steps)` cycles, each applying `n_nm`
/// positive morphisms per child, training all children for `epochs_neigh`
/// epochs and keeping the best on validation loss.
pub fn hill_climb_baseline(cfg: &SearchConfig, data: &Dataset, out: &mut Outputs<'_>) -> Result<SearchResult, SearchError> {
    cfg.validate()?;
    let start = Instant::now();
    let bpe = batches_per_epoch(data, cfg)?;
    let cycles = cfg.n_steps.ceil() as usize;
    let iters = cfg.cycle_iters(bpe);
    let schedule = cfg.schedule(bpe);
    let select_batches = (data.splits.val.len() / cfg.batch_val).max(1);
    let mut inc = initial_incumbent(cfg, data)?;
    let pretrain_val = evaluate(&inc.spec, &inc.params, data, crate::data::Split::Val)?;
    save(out, &inc.spec, &inc.params)?;
    let mut round_log = Vec::new();
    let clock = with_pool(cfg.workers, |pool| -> Result<usize, SearchError> {
        let mut run = RunState { clock: 0, seed: cfg.seed, sink: &mut *out.metrics, pool };
        for round in 0..cycles {
            let mut rng = rng_for(cfg.seed, &[tag::MORPH, round as u64]);
            let probe = probe_inputs(data, cfg.seed, round);
            let lg = cfg.local_graph(cfg.n_nm, MorphMix::positive());
            let (graph, records) = build_local_graph(&inc.spec, &inc.params, &lg, round, &probe, &mut rng)?;
            for r in &records {
                out.audit.record(r)?;
            }
            let obj = NetObjective::new(graph.payloads().iter().map(|c| c.spec.clone()).collect(), data);
            let mut supply = NetSupply::new(data, graph.node_count(), cfg.batch_train, cfg.batch_val, cfg.seed, round)?;
            let states = graph.payloads().iter().map(|c| NodeState::at_rest(c.params.flat.clone())).collect();
            let first_iter = run.clock;
            let res = hill_cycle(&obj, &mut supply, &graph, states, schedule, cfg.rule, iters, select_batches, cfg.val_decay, round, &mut run)?;
            let w = res.winner;
            let cand = graph.payload(w);
            log::info!("cycle {round}: kept child {} ({}) with val loss {:.4}", w, cand.spec, res.selection[w.index()]);
            inc = Incumbent { spec: cand.spec.clone(), params: NetParams { flat: res.states[w.index()].x.clone() }, velocity: vec![0.0; cand.params.len()] };
            round_log.push(RoundSummary {
                round,
                iterations: iters,
                stop: StopReason::BudgetExhausted,
                winner: w.index(),
                winner_arch: cand.spec.to_string(),
                counts: Vec::new(),
                restarts: 0,
                first_iter,
            });
            if let Some(p) = out.checkpoint {
                Checkpoint::save(p, &inc.spec, &inc.params)?;
            }
        }
        Ok(run.clock)
    })??;
    let explored = cfg.n_neigh * cycles + 1;
    finish(cfg, data, inc, out, (cycles, explored, clock, pretrain_val, round_log), start)
}

/// Seed of an independent derived stream of the run.
pub fn run_seed(cfg: &SearchConfig, tags: &[u64]) -> u64 {
    derive_seed(cfg.seed, tags)
}
