use crate::semigraph::ArchGraph;

use super::rates::phi_pair_rate;
use super::{negative_part, DynamicsParams};

/// Per-node momentum variable of the second-order dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct Potential {
    phi: Vec<f64>,
}

impl Potential {
    pub fn zeros(n: usize) -> Self {
        Potential { phi: vec![0.0; n] }
    }

    pub fn from_values(phi: Vec<f64>) -> Self {
        Potential { phi }
    }

    pub fn values(&self) -> &[f64] {
        &self.phi
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    pub fn reset(&mut self) {
        self.phi.iter_mut().for_each(|p| *p = 0.0);
    }
}

/// One explicit step of the potential:
///
/// `phi'(g) = phi(g) - tau sum_g' (r(g,g') K(g,g'))^2 - tau (f(g)^beta + V(g))`
///
/// where `r` is the oriented pair rate used by the mutation step. With
/// `saturate_quadratic` the middle term `tau q` becomes `tau q / (1 + tau q)`,
/// which agrees to first order and keeps a starved node's potential from
/// running away in finite time. Optional
/// terms `-tau |v_g|^2 / 2` (pass per-node kinetic energies) and
/// `-tau gamma phi(g)` are switched on through `params`.
pub fn update_potential<P>(
    phi: &Potential,
    f: &[f64],
    values: &[f64],
    graph: &ArchGraph<P>,
    params: &DynamicsParams,
    tau_k: f64,
    kinetic: Option<&[f64]>,
) -> Potential {
    let n = graph.node_count();
    assert_eq!(phi.len(), n);
    assert_eq!(f.len(), n);
    assert_eq!(values.len(), n);
    let p = &phi.phi;
    let next = graph
        .ids()
        .map(|g| {
            let i = g.index();
            let quad: f64 = graph
                .ids()
                .filter(|&h| h != g)
                .map(|h| {
                    let r = phi_pair_rate(params.flow, p[i], p[h.index()]) * graph.kernel(g, h);
                    r * r
                })
                .sum();
            let step = if params.saturate_quadratic { tau_k * quad / (1.0 + tau_k * quad) } else { tau_k * quad };
            let mut out = p[i] - step - tau_k * (params.density_term(f[i]) + values[i]);
            if params.kinetic_term {
                if let Some(k) = kinetic {
                    out -= tau_k * k[i];
                }
            }
            if params.friction_term {
                out -= tau_k * params.gamma * p[i];
            }
            out
        })
        .collect();
    Potential { phi: next }
}

/// Restart quantity.
///
/// Default (signed drift): `R = sum_{g,g'} r(g,g') K(g,g') (V(g') - V(g)) f(g)`,
/// the first-order change of the mean loss under the current flow.
/// Literal form: `sum r(g,g') K(g,g') (V(g) - V(g'))^- f(g)`.
pub fn restart_drift<P>(
    phi: &Potential,
    values: &[f64],
    graph: &ArchGraph<P>,
    f: &[f64],
    params: &DynamicsParams,
) -> f64 {
    let p = &phi.phi;
    let mut total = 0.0;
    for g in graph.ids() {
        for h in graph.ids() {
            if g == h {
                continue;
            }
            let k = graph.kernel(g, h);
            if k <= 0.0 {
                continue;
            }
            let flow = phi_pair_rate(params.flow, p[g.index()], p[h.index()]);
            if flow == 0.0 {
                continue;
            }
            let dv = values[h.index()] - values[g.index()];
            let loss_term = if params.literal_restart { negative_part(-dv) } else { dv };
            total += flow * loss_term * k * f[g.index()];
        }
    }
    total
}

/// True when the potential should be reset to zero.
pub fn restart_check<P>(
    phi: &Potential,
    values: &[f64],
    graph: &ArchGraph<P>,
    f: &[f64],
    params: &DynamicsParams,
) -> bool {
    restart_drift(phi, values, graph, f, params) > 0.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semigraph::{unit_graph, Topology};

    fn pair() -> ArchGraph<()> {
        unit_graph((), [()], Topology::Star)
    }

    #[test]
    fn symmetric_case() {
        let g = unit_graph((), [(), ()], Topology::Complete);
        let params = DynamicsParams::default();
        // f^beta + V = 1.2 everywhere
        let f = [0.2, 0.4, 0.4];
        let v = [1.0, 0.8, 0.8];
        let out = update_potential(&Potential::zeros(3), &f, &v, &g, &params, 0.1, None);
        for p in out.values() {
            assert!((p + 0.12).abs() < 1e-12);
        }
    }

    #[test]
    fn two_node_hand_example() {
        let g = pair();
        let params = DynamicsParams::default();
        let out = update_potential(&Potential::zeros(2), &[0.9, 0.1], &[2.0, 1.0], &g, &params, 0.1, None);
        assert!((out.values()[0] + 0.29).abs() < 1e-12);
        assert!((out.values()[1] + 0.11).abs() < 1e-12);
    }

    #[test]
    fn quadratic_term_uses_outflow() {
        let g = pair();
        let params = DynamicsParams { saturate_quadratic: false, ..Default::default() };
        // node 0 flows toward node 1 (higher phi) at rate 2
        let phi = Potential::from_values(vec![0.0, 2.0]);
        let out = update_potential(&phi, &[0.0, 0.0], &[0.0, 0.0], &g, &params, 0.1, None);
        assert!((out.values()[0] + 0.4).abs() < 1e-12);
        assert!((out.values()[1] - 2.0).abs() < 1e-12);
        let sat = update_potential(&phi, &[0.0, 0.0], &[0.0, 0.0], &g, &DynamicsParams::default(), 0.1, None);
        assert!((sat.values()[0] + 0.4 / 1.4).abs() < 1e-12);
    }

    #[test]
    fn saturated_term_stays_bounded() {
        let g = pair();
        let params = DynamicsParams::default();
        let mut phi = Potential::zeros(2);
        for _ in 0..10_000 {
            phi = update_potential(&phi, &[0.0, 1.0], &[3.0, 0.0], &g, &params, 0.05, None);
        }
        let gap = phi.values()[1] - phi.values()[0];
        assert!(gap.is_finite() && gap > 0.0 && gap < 10_000.0 * (0.05 * 2.0 + 1.0));
    }

    #[test]
    fn friction_flag() {
        let g = ArchGraph::new(());
        let params = DynamicsParams { gamma: 1.0, friction_term: true, ..Default::default() };
        let phi = Potential::from_values(vec![5.0]);
        let out = update_potential(&phi, &[0.0], &[0.0], &g, &params, 0.1, None);
        assert!((out.values()[0] - 4.5).abs() < 1e-12);
        let off = DynamicsParams { gamma: 1.0, ..Default::default() };
        let out = update_potential(&phi, &[0.0], &[0.0], &g, &off, 0.1, None);
        assert_eq!(out.values()[0], 5.0);
    }

    #[test]
    fn kinetic_flag() {
        let g = ArchGraph::new(());
        let on = DynamicsParams { kinetic_term: true, ..Default::default() };
        let out = update_potential(&Potential::zeros(1), &[0.0], &[0.0], &g, &on, 0.1, Some(&[3.0]));
        assert!((out.values()[0] + 0.3).abs() < 1e-12);
        let off = DynamicsParams::default();
        let out = update_potential(&Potential::zeros(1), &[0.0], &[0.0], &g, &off, 0.1, Some(&[3.0]));
        assert_eq!(out.values()[0], 0.0);
    }

    #[test]
    fn restart_sign_table() {
        let g = pair();
        let params = DynamicsParams::default();
        let f = [0.5, 0.5];
        let uniform = Potential::from_values(vec![1.0, 1.0]);
        assert!(!restart_check(&uniform, &[1.0, 0.0], &g, &f, &params));
        // phi(b) > phi(a): flow a -> b
        let phi = Potential::from_values(vec![0.0, 1.0]);
        assert!(!restart_check(&phi, &[1.0, 0.5], &g, &f, &params));
        assert!(restart_check(&phi, &[0.5, 1.0], &g, &f, &params));
        assert!(restart_drift(&phi, &[1.0, 0.5], &g, &f, &params) < 0.0);
    }

    #[test]
    fn literal_restart_is_nonnegative() {
        let g = pair();
        let params = DynamicsParams { literal_restart: true, ..Default::default() };
        let f = [0.5, 0.5];
        let phi = Potential::from_values(vec![0.0, 1.0]);
        assert_eq!(restart_drift(&phi, &[1.0, 0.5], &g, &f, &params), 0.0);
        assert!(restart_check(&phi, &[0.5, 1.0], &g, &f, &params));
    }
}
