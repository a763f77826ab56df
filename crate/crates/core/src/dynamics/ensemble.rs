use rand::Rng;
use rand_distr::{Binomial, Distribution};

use crate::semigraph::NodeId;

use super::{MoveRates, RateMode};

/// Particle mass per node.
///
/// Because all particles on a node share one parameter vector, the ensemble
/// only needs counts. In sampled mode counts stay integral (stored as `f64`,
/// exact below 2^53); in expected mode they are fractional masses. A node
/// flagged as carrying a ghost always keeps one unit of mass that never moves.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    counts: Vec<f64>,
    ghost: Vec<bool>,
    total: f64,
}

/// Mass moved along each ordered pair during one mutation step, `n x n`
/// row-major (`from * n + to`).
#[derive(Debug, Clone, PartialEq)]
pub struct Transfers {
    n: usize,
    moved: Vec<f64>,
}

impl Transfers {
    fn new(n: usize) -> Self {
        Transfers { n, moved: vec![0.0; n * n] }
    }

    pub fn get(&self, from: NodeId, to: NodeId) -> f64 {
        self.moved[from.index() * self.n + to.index()]
    }

    /// Total mass that left `from`.
    pub fn out_of(&self, from: NodeId) -> f64 {
        self.moved[from.index() * self.n..(from.index() + 1) * self.n].iter().sum()
    }

    pub fn total(&self) -> f64 {
        self.moved.iter().sum()
    }
}

impl ParticleEnsemble {
    /// `n_particles` on `center`, one ghost on every other node.
    pub fn for_round(n_nodes: usize, center: NodeId, n_particles: usize) -> Self {
        let mut counts = vec![1.0; n_nodes];
        let mut ghost = vec![true; n_nodes];
        counts[center.index()] = n_particles as f64;
        ghost[center.index()] = false;
        let total = counts.iter().sum();
        ParticleEnsemble { counts, ghost, total }
    }

    /// Arbitrary counts; ghost nodes must hold at least one unit.
    pub fn from_counts(counts: Vec<f64>, ghost: Vec<bool>) -> Self {
        assert_eq!(counts.len(), ghost.len());
        assert!(counts.iter().all(|c| *c >= 0.0 && c.is_finite()));
        assert!(counts.iter().zip(&ghost).all(|(c, g)| !g || *c >= 1.0));
        let total = counts.iter().sum();
        ParticleEnsemble { counts, ghost, total }
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn count(&self, g: NodeId) -> f64 {
        self.counts[g.index()]
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn has_ghost(&self, g: NodeId) -> bool {
        self.ghost[g.index()]
    }

    /// Total mass fixed at construction.
    pub fn total(&self) -> f64 {
        self.total
    }

    /// `f(g) = count(g) / total`.
    pub fn marginal(&self) -> Vec<f64> {
        self.counts.iter().map(|c| c / self.total).collect()
    }

    fn movable(&self, i: usize) -> f64 {
        let pinned = if self.ghost[i] { 1.0 } else { 0.0 };
        (self.counts[i] - pinned).max(0.0)
    }

    /// Node with the most mass among `candidates`; ties go to the lowest id.
    pub fn argmax(&self, candidates: impl Iterator<Item = NodeId>) -> Option<NodeId> {
        candidates.fold(None, |best: Option<NodeId>, g| match best {
            Some(b) if self.count(b) >= self.count(g) => Some(b),
            _ => Some(g),
        })
    }
}

/// Moves particles according to `rates`, synchronously from the pre-step counts.
pub fn apply_mutation<R: Rng + ?Sized>(
    ensemble: &mut ParticleEnsemble,
    rates: &[MoveRates],
    mode: RateMode,
    rng: &mut R,
) -> Transfers {
    let n = ensemble.len();
    assert_eq!(rates.len(), n, "rates computed for a different graph");
    let mut tr = Transfers::new(n);
    for (i, r) in rates.iter().enumerate() {
        if r.move_prob <= 0.0 || r.dest.is_empty() {
            continue;
        }
        let movable = ensemble.movable(i);
        if movable <= 0.0 {
            continue;
        }
        match mode {
            RateMode::Expected => {
                let out = movable * r.move_prob;
                for &(d, p) in &r.dest {
                    tr.moved[i * n + d.index()] += out * p;
                }
            }
            RateMode::Sampled => {
                let movers = binomial(rng, movable as u64, r.move_prob);
                // multinomial split through conditional binomials
                let mut left = movers;
                let mut mass_left = 1.0;
                for (k, &(d, p)) in r.dest.iter().enumerate() {
                    if left == 0 {
                        break;
                    }
                    let take = if k + 1 == r.dest.len() {
                        left
                    } else {
                        binomial(rng, left, (p / mass_left).clamp(0.0, 1.0))
                    };
                    tr.moved[i * n + d.index()] += take as f64;
                    left -= take;
                    mass_left -= p;
                }
            }
        }
    }
    for from in 0..n {
        for to in 0..n {
            let m = tr.moved[from * n + to];
            if m != 0.0 {
                ensemble.counts[from] -= m;
                ensemble.counts[to] += m;
            }
        }
    }
    if mode == RateMode::Expected {
        for c in &mut ensemble.counts {
            if *c < 0.0 {
                *c = 0.0;
            }
        }
    }
    tr
}

fn binomial<R: Rng + ?Sized>(rng: &mut R, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("p in (0,1)").sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{mutation_rates_first, DynamicsParams};
    use crate::rng::rng_for;
    use crate::semigraph::{unit_graph, Topology};

    fn ids(n: usize) -> Vec<NodeId> {
        let g = unit_graph((), std::iter::repeat_n((), n - 1), Topology::Star);
        g.ids().collect()
    }

    #[test]
    fn round_layout() {
        let e = ParticleEnsemble::for_round(9, ids(9)[0], 100);
        assert_eq!(e.total(), 108.0);
        assert_eq!(e.count(ids(9)[0]), 100.0);
        assert!(!e.has_ghost(ids(9)[0]));
        assert!(ids(9)[1..].iter().all(|&g| e.has_ghost(g) && e.count(g) == 1.0));
        let f = e.marginal();
        assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_rates_leave_counts() {
        let mut e = ParticleEnsemble::for_round(3, ids(3)[0], 10);
        let before = e.clone();
        let rates = vec![MoveRates::stay(); 3];
        let tr = apply_mutation(&mut e, &rates, RateMode::Sampled, &mut rng_for(1, &[]));
        assert_eq!(e, before);
        assert_eq!(tr.total(), 0.0);
    }

    #[test]
    fn binomial_movers_within_three_sigma() {
        let id = ids(2);
        let mut e = ParticleEnsemble::from_counts(vec![10_000.0, 0.0], vec![false, false]);
        let rates = vec![MoveRates { move_prob: 0.08, dest: vec![(id[1], 1.0)] }, MoveRates::stay()];
        let tr = apply_mutation(&mut e, &rates, RateMode::Sampled, &mut rng_for(3, &[]));
        let sigma = (10_000.0f64 * 0.08 * 0.92).sqrt();
        assert!((tr.get(id[0], id[1]) - 800.0).abs() <= 3.0 * sigma);
        assert_eq!(e.counts().iter().sum::<f64>(), 10_000.0);
    }

    #[test]
    fn ghost_survives_maximal_outflow() {
        let id = ids(2);
        let mut e = ParticleEnsemble::from_counts(vec![0.0, 5.0], vec![false, true]);
        let rates = vec![MoveRates::stay(), MoveRates { move_prob: 1.0, dest: vec![(id[0], 1.0)] }];
        for mode in [RateMode::Sampled, RateMode::Expected] {
            let mut e2 = e.clone();
            apply_mutation(&mut e2, &rates, mode, &mut rng_for(5, &[]));
            assert_eq!(e2.count(id[1]), 1.0);
            assert_eq!(e2.count(id[0]), 4.0);
        }
        apply_mutation(&mut e, &rates, RateMode::Sampled, &mut rng_for(5, &[]));
        apply_mutation(&mut e, &rates, RateMode::Sampled, &mut rng_for(6, &[]));
        assert_eq!(e.count(id[1]), 1.0);
    }

    #[test]
    fn expected_mode_moves_fractional_mass() {
        let id = ids(2);
        let mut e = ParticleEnsemble::from_counts(vec![10.0, 0.0], vec![false, false]);
        let rates = vec![MoveRates { move_prob: 0.25, dest: vec![(id[1], 1.0)] }, MoveRates::stay()];
        apply_mutation(&mut e, &rates, RateMode::Expected, &mut rng_for(0, &[]));
        assert_eq!(e.counts(), &[7.5, 2.5]);
    }

    #[test]
    fn sampled_mass_is_exact_over_many_steps() {
        let g = unit_graph((), std::iter::repeat_n((), 8), Topology::Star);
        let mut e = ParticleEnsemble::for_round(9, g.center(), 500);
        let params = DynamicsParams::default();
        let mut rng = rng_for(11, &[]);
        let values: Vec<f64> = (0..9).map(|i| i as f64 * 0.05).collect();
        for _ in 0..500 {
            let r = mutation_rates_first(&e.marginal(), &values, &g, &params, 0.3).unwrap();
            apply_mutation(&mut e, &r, RateMode::Sampled, &mut rng);
            assert_eq!(e.counts().iter().sum::<f64>(), e.total());
            assert!(e.counts().iter().all(|c| c.fract() == 0.0));
        }
    }

    #[test]
    fn argmax_prefers_lowest_id_on_ties() {
        let id = ids(3);
        let e = ParticleEnsemble::from_counts(vec![1.0, 4.0, 4.0], vec![false; 3]);
        assert_eq!(e.argmax(id.iter().copied()), Some(id[1]));
        assert_eq!(e.argmax(std::iter::empty()), None);
    }
}
