use rand::Rng;

use crate::semigraph::ArchGraph;

use super::{
    apply_mutation, energy, mutation_rates_first, mutation_rates_second, restart_check, update_potential, DynamicsError,
    DynamicsParams, Order, ParticleEnsemble, Potential,
};

/// Marginals and energies of a run with fixed node values.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowTrace {
    /// `f` after every step; entry 0 is the initial marginal.
    pub f: Vec<Vec<f64>>,
    pub energy: Vec<f64>,
    /// Mass moved per step.
    pub moved: Vec<f64>,
    pub counts: Vec<f64>,
}

/// Runs only the mutation part of the dynamics (and the potential update in
/// second order) with the node values held at `values` and a constant step.
pub fn frozen_flow<P, R: Rng + ?Sized>(
    graph: &ArchGraph<P>,
    values: &[f64],
    mut ens: ParticleEnsemble,
    params: &DynamicsParams,
    tau: f64,
    steps: usize,
    rng: &mut R,
) -> Result<FlowTrace, DynamicsError> {
    params.validate()?;
    if ens.len() != graph.node_count() {
        return Err(DynamicsError::DimensionMismatch { expected: graph.node_count(), got: ens.len() });
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(DynamicsError::InvalidParam("tau must be > 0"));
    }
    let mut phi = Potential::zeros(graph.node_count());
    let f0 = ens.marginal();
    let mut trace = FlowTrace {
        energy: vec![energy(&f0, values, params.beta, params.form)],
        f: vec![f0],
        moved: Vec::with_capacity(steps),
        counts: Vec::new(),
    };
    for _ in 0..steps {
        let f = ens.marginal();
        let rates = match params.order {
            Order::FirstOrder => mutation_rates_first(&f, values, graph, params, tau)?,
            Order::SecondOrder => mutation_rates_second(&phi, graph, params, tau)?,
        };
        let moved = apply_mutation(&mut ens, &rates, params.rate_mode, rng).total();
        let after = ens.marginal();
        if params.order == Order::SecondOrder {
            phi = update_potential(&phi, &f, values, graph, params, tau, None);
            if params.restart && restart_check(&phi, values, graph, &after, params) {
                phi.reset();
            }
        }
        trace.energy.push(energy(&after, values, params.beta, params.form));
        trace.moved.push(moved);
        trace.f.push(after);
    }
    trace.counts = ens.counts().to_vec();
    Ok(trace)
}
