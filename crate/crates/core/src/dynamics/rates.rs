use crate::semigraph::{ArchGraph, NodeId};

use super::{negative_part, DynamicsError, DynamicsParams, Flow, Potential};

/// Jump probability of a particle sitting on one node, and where it lands.
#[derive(Debug, Clone, PartialEq)]
pub struct MoveRates {
    /// Probability of leaving the node during one step, in `[0, 1]`.
    pub move_prob: f64,
    /// Destination distribution, ascending by id, positive entries only.
    /// Empty when `move_prob` is zero.
    pub dest: Vec<(NodeId, f64)>,
}

impl MoveRates {
    pub fn stay() -> Self {
        MoveRates { move_prob: 0.0, dest: Vec::new() }
    }

    pub fn dest_prob(&self, g: NodeId) -> f64 {
        self.dest.iter().find(|(d, _)| *d == g).map_or(0.0, |(_, p)| *p)
    }
}

/// Per-node score `f^beta + V` (or `log f + V`).
pub fn node_scores(f: &[f64], values: &[f64], params: &DynamicsParams) -> Vec<f64> {
    f.iter().zip(values).map(|(&fg, &v)| params.density_term(fg) + v).collect()
}

fn check_len<P>(graph: &ArchGraph<P>, len: usize) -> Result<(), DynamicsError> {
    if graph.node_count() == 0 || len == 0 {
        return Err(DynamicsError::EmptyGraph);
    }
    if len != graph.node_count() {
        return Err(DynamicsError::DimensionMismatch { expected: graph.node_count(), got: len });
    }
    Ok(())
}

/// Turns pairwise rates `r(g, g')` into clipped move probabilities.
fn assemble<P>(
    graph: &ArchGraph<P>,
    kappa_tau: f64,
    pair_rate: impl Fn(NodeId, NodeId) -> f64,
) -> Vec<MoveRates> {
    graph
        .ids()
        .map(|g| {
            let raw: Vec<(NodeId, f64)> = graph
                .ids()
                .filter(|&h| h != g)
                .filter_map(|h| {
                    let k = graph.kernel(g, h);
                    if k <= 0.0 {
                        return None;
                    }
                    let r = pair_rate(g, h) * k;
                    (r > 0.0).then_some((h, r))
                })
                .collect();
            let total: f64 = raw.iter().map(|(_, r)| r).sum();
            if !(total > 0.0) {
                return MoveRates::stay();
            }
            let move_prob = (kappa_tau * total).min(1.0);
            if !(move_prob > 0.0) {
                return MoveRates::stay();
            }
            let dest = raw.into_iter().map(|(h, r)| (h, r / total)).collect();
            MoveRates { move_prob, dest }
        })
        .collect()
}

/// First-order rates: `r(g, g') = (s(g') - s(g))^- K(g, g')`, so mass only
/// flows toward strictly lower scores.
pub fn mutation_rates_first<P>(
    f: &[f64],
    values: &[f64],
    graph: &ArchGraph<P>,
    params: &DynamicsParams,
    tau_k: f64,
) -> Result<Vec<MoveRates>, DynamicsError> {
    check_len(graph, f.len())?;
    check_len(graph, values.len())?;
    let s = node_scores(f, values, params);
    Ok(assemble(graph, params.kappa * tau_k, |g, h| {
        negative_part(s[h.index()] - s[g.index()])
    }))
}

/// Pairwise second-order rate before the kernel weight.
#[inline]
pub(crate) fn phi_pair_rate(flow: Flow, phi_g: f64, phi_h: f64) -> f64 {
    match flow {
        Flow::TowardHighPhi => negative_part(phi_g - phi_h),
        Flow::TowardLowPhi => negative_part(phi_h - phi_g),
    }
}

/// Second-order rates driven by the potential.
pub fn mutation_rates_second<P>(
    phi: &Potential,
    graph: &ArchGraph<P>,
    params: &DynamicsParams,
    tau_k: f64,
) -> Result<Vec<MoveRates>, DynamicsError> {
    check_len(graph, phi.len())?;
    let p = phi.values();
    Ok(assemble(graph, params.kappa * tau_k, |g, h| {
        phi_pair_rate(params.flow, p[g.index()], p[h.index()])
    }))
}
