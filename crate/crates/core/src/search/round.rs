//! The particle dynamics of one search round on a fixed local graph.

use std::borrow::Borrow;

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::dynamics::{
    apply_mutation, energy, mutation_rates_first, mutation_rates_second, restart_check, train_step, update_potential,
    DynamicsParams, NodeState, Order, ParticleEnsemble, Potential, Schedule, TrainRule,
};
use crate::objective::{self, Objective, ValTracker};
use crate::rng::{derive_seed, rng_for, Rng};
use crate::semigraph::{ArchGraph, NodeId};

use super::record::{MetricsRow, MetricsSink};
use super::SearchError;

/// Per-node training and validation batches.
pub trait BatchSupply<O: Objective + ?Sized> {
    type Owned: Borrow<O::Batch> + Send;

    fn train_batch(&mut self, g: usize) -> Self::Owned;

    fn val_batch(&mut self, g: usize) -> Self::Owned;
}

/// Gaussian noise draws for [`crate::objective::QuadraticObjective`], one
/// independent stream per node and purpose.
pub struct NoiseSupply {
    sigma: f64,
    train: Vec<Rng>,
    val: Vec<Rng>,
}

impl NoiseSupply {
    pub fn new(nodes: usize, sigma: f64, seed: u64) -> Self {
        NoiseSupply {
            sigma,
            train: (0..nodes).map(|g| rng_for(seed, &[1, g as u64])).collect(),
            val: (0..nodes).map(|g| rng_for(seed, &[2, g as u64])).collect(),
        }
    }
}

impl BatchSupply<crate::objective::QuadraticObjective> for NoiseSupply {
    type Owned = f64;

    fn train_batch(&mut self, g: usize) -> f64 {
        self.sigma * self.train[g].sample::<f64, _>(StandardNormal)
    }

    fn val_batch(&mut self, g: usize) -> f64 {
        self.sigma * self.val[g].sample::<f64, _>(StandardNormal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// A child holds at least twice the incumbent's particles.
    Doubled,
    /// The global dynamics budget ran out.
    BudgetExhausted,
    /// The per-round iteration cap was hit without doubling.
    Timeout,
}

/// Fixed settings of a round.
#[derive(Debug, Clone)]
pub struct RoundSpec {
    pub dynamics: DynamicsParams,
    pub particles: usize,
    pub schedule: Schedule,
    pub rule: TrainRule,
    pub val_decay: f64,
    pub round: usize,
    /// Iterations after which the round times out.
    pub max_iters: usize,
    /// Global clock value at which the dynamics budget is spent.
    pub budget_end: usize,
}

/// State shared across rounds.
pub struct RunState<'a> {
    /// Global iteration counter, never reset between rounds.
    pub clock: usize,
    pub seed: u64,
    pub sink: &'a mut dyn MetricsSink,
    pub pool: Option<&'a rayon::ThreadPool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub winner: NodeId,
    pub stop: StopReason,
    pub iterations: usize,
    pub states: Vec<NodeState>,
    pub counts: Vec<f64>,
    pub val: Vec<f64>,
    /// Total particles moved per iteration.
    pub movers: Vec<f64>,
    pub energy: Vec<f64>,
    pub restarts: usize,
}

pub(super) fn step_all<O, B>(
    obj: &O,
    states: &mut [NodeState],
    batches: Vec<B>,
    tau: f64,
    rule: TrainRule,
    pool: Option<&rayon::ThreadPool>,
) -> Result<Vec<f64>, SearchError>
where
    O: Objective + ?Sized,
    B: Borrow<O::Batch> + Send,
{
    let one = |g: usize, st: &mut NodeState, b: B| -> Result<f64, SearchError> {
        let (v, grad) = objective::value_and_grad(obj, &st.x, g, b.borrow())?;
        train_step(st, &grad, tau, rule)?;
        if !st.is_finite() {
            return Err(SearchError::Divergence(format!("node {g} parameters became non-finite")));
        }
        Ok(v)
    };
    match pool {
        Some(pool) => pool.install(|| {
            states
                .par_iter_mut()
                .zip(batches.into_par_iter())
                .enumerate()
                .map(|(g, (st, b))| one(g, st, b))
                .collect()
        }),
        None => states.iter_mut().zip(batches).enumerate().map(|(g, (st, b))| one(g, st, b)).collect(),
    }
}

pub(super) fn eval_all<O, B>(obj: &O, states: &[NodeState], batches: Vec<B>, pool: Option<&rayon::ThreadPool>) -> Result<Vec<f64>, SearchError>
where
    O: Objective + ?Sized,
    B: Borrow<O::Batch> + Send,
{
    let one = |g: usize, st: &NodeState, b: B| -> Result<f64, SearchError> {
        Ok(objective::eval_train(obj, &st.x, g, b.borrow())?)
    };
    match pool {
        Some(pool) => pool.install(|| {
            states
                .par_iter()
                .zip(batches.into_par_iter())
                .enumerate()
                .map(|(g, (st, b))| one(g, st, b))
                .collect()
        }),
        None => states.iter().zip(batches).enumerate().map(|(g, (st, b))| one(g, st, b)).collect(),
    }
}

/// Node with the most particles; ties go to the lower running value, then the lower id.
fn leader(ens: &ParticleEnsemble, val: &[f64], candidates: impl Iterator<Item = NodeId>) -> Option<NodeId> {
    candidates.fold(None, |best: Option<NodeId>, g| match best {
        Some(b) if (ens.count(b), -val[b.index()]) >= (ens.count(g), -val[g.index()]) => Some(b),
        _ => Some(g),
    })
}

/// Runs the dynamics on `graph` until doubling, budget exhaustion or the
/// iteration cap. `states[g]` holds the parameters and velocity of node `g`.
///
/// Each iteration trains every node, folds a validation sample into its
/// running value, moves particles, and (second order) integrates the
/// potential. The stopping rule is evaluated on the post-mutation counts.
pub fn drive_round<O, S, P>(
    obj: &O,
    supply: &mut S,
    graph: &ArchGraph<P>,
    mut states: Vec<NodeState>,
    spec: &RoundSpec,
    run: &mut RunState<'_>,
) -> Result<RoundOutcome, SearchError>
where
    O: Objective + ?Sized,
    S: BatchSupply<O>,
{
    let n = graph.node_count();
    assert_eq!(states.len(), n, "one state per node");
    assert_eq!(obj.node_count(), n, "objective covers every node");
    spec.dynamics.validate()?;
    let center = graph.center();
    let params = &spec.dynamics;
    let mut ens = ParticleEnsemble::for_round(n, center, spec.particles);
    let mut tracker = ValTracker::new(n, spec.val_decay);
    let mut phi = Potential::zeros(n);
    let mut rng = rng_for(run.seed, &[crate::rng::tag::MUTATION, spec.round as u64]);
    let (mut movers, mut energies) = (Vec::new(), Vec::new());
    let mut restarts = 0;
    let mut iterations = 0;
    let children = || graph.ids().filter(move |&g| g != center);

    loop {
        let tau = spec.schedule.tau(run.clock);
        let batches: Vec<S::Owned> = (0..n).map(|g| supply.train_batch(g)).collect();
        let v_train = step_all(obj, &mut states, batches, tau, spec.rule, run.pool)?;
        let val_batches: Vec<S::Owned> = (0..n).map(|g| supply.val_batch(g)).collect();
        let samples = eval_all(obj, &states, val_batches, run.pool)?;
        let v_val: Vec<f64> = samples.iter().enumerate().map(|(g, &s)| tracker.update(g, s)).collect();

        let f = ens.marginal();
        let rates = match params.order {
            Order::FirstOrder => mutation_rates_first(&f, &v_val, graph, params, tau)?,
            Order::SecondOrder => mutation_rates_second(&phi, graph, params, tau)?,
        };
        let transfers = apply_mutation(&mut ens, &rates, params.rate_mode, &mut rng);
        let f_after = ens.marginal();
        if params.order == Order::SecondOrder {
            let kinetic: Option<Vec<f64>> = params.kinetic_term.then(|| states.iter().map(NodeState::kinetic).collect());
            phi = update_potential(&phi, &f, &v_val, graph, params, tau, kinetic.as_deref());
            if params.restart && restart_check(&phi, &v_val, graph, &f_after, params) {
                phi.reset();
                restarts += 1;
            }
            if phi.values().iter().any(|p| !p.is_finite()) {
                return Err(SearchError::Divergence("potential became non-finite".into()));
            }
        }
        let e = energy(&f_after, &v_val, params.beta, params.form);
        movers.push(transfers.total());
        energies.push(e);

        for g in graph.ids() {
            let i = g.index();
            run.sink.row(&MetricsRow {
                iter: run.clock,
                round: spec.round,
                node_id: i,
                count: ens.count(g),
                f: f_after[i],
                v_train: v_train[i],
                v_val: v_val[i],
                phi: phi.values()[i],
                tau_k: tau,
                energy: e,
                moved: transfers.out_of(g),
            })?;
        }
        run.sink.flush()?;
        run.clock += 1;
        iterations += 1;

        let best_child = leader(&ens, &v_val, children());
        let stop = match best_child {
            Some(b) if ens.count(b) >= 2.0 * ens.count(center) => Some((b, StopReason::Doubled)),
            _ if run.clock >= spec.budget_end => Some((leader(&ens, &v_val, graph.ids()).expect("nonempty"), StopReason::BudgetExhausted)),
            _ if iterations >= spec.max_iters => Some((leader(&ens, &v_val, graph.ids()).expect("nonempty"), StopReason::Timeout)),
            _ => None,
        };
        if let Some((winner, stop)) = stop {
            log::debug!(
                "round {} stopped after {iterations} iterations ({stop:?}); winner {winner} with counts {:?}",
                spec.round,
                ens.counts()
            );
            return Ok(RoundOutcome {
                winner,
                stop,
                iterations,
                states,
                counts: ens.counts().to_vec(),
                val: v_val,
                movers,
                energy: energies,
                restarts,
            });
        }
    }
}

/// Seed for the per-node batch streams of a round.
pub fn stream_seed(seed: u64, round: usize, g: usize, purpose: u64) -> u64 {
    derive_seed(seed, &[purpose, round as u64, g as u64])
}
