//! Objectives `V(x, g)` over a family of nodes, validation trackers and
//! closed-form test objectives.

use thiserror::Error;

use crate::data::Dataset;
use crate::nn::{self, Batch, NetParams, NetSpec, NnError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("non-finite value on node {0}")]
    NonFiniteValue(usize),
    #[error("non-finite gradient on node {0}")]
    NonFiniteGradient(usize),
    #[error("node {node}: expected {expected} parameters, got {got}")]
    DimensionMismatch { node: usize, expected: usize, got: usize },
    #[error("unknown node {0}")]
    UnknownNode(usize),
    #[error(transparent)]
    Net(#[from] NnError),
}

/// A loss over parameters `x` of node `g`, evaluated on a mini-batch.
pub trait Objective: Sync {
    type Batch: ?Sized + Sync;

    fn node_count(&self) -> usize;

    fn dim(&self, g: usize) -> usize;

    fn value(&self, x: &[f64], g: usize, batch: &Self::Batch) -> Result<f64, ObjectiveError>;

    fn value_and_grad(&self, x: &[f64], g: usize, batch: &Self::Batch) -> Result<(f64, Vec<f64>), ObjectiveError>;
}

fn check_dim<O: Objective + ?Sized>(obj: &O, x: &[f64], g: usize) -> Result<(), ObjectiveError> {
    if g >= obj.node_count() {
        return Err(ObjectiveError::UnknownNode(g));
    }
    let expected = obj.dim(g);
    if x.len() != expected {
        return Err(ObjectiveError::DimensionMismatch { node: g, expected, got: x.len() });
    }
    Ok(())
}

/// Training value `V_k(x, g)` on a training batch.
pub fn eval_train<O: Objective + ?Sized>(obj: &O, x: &[f64], g: usize, batch: &O::Batch) -> Result<f64, ObjectiveError> {
    check_dim(obj, x, g)?;
    let v = obj.value(x, g, batch)?;
    if !v.is_finite() {
        return Err(ObjectiveError::NonFiniteValue(g));
    }
    Ok(v)
}

/// Folds one validation sample into the tracker and returns the running value.
pub fn eval_val<O: Objective + ?Sized>(
    obj: &O,
    tracker: &mut ValTracker,
    x: &[f64],
    g: usize,
    batch: &O::Batch,
) -> Result<f64, ObjectiveError> {
    let s = eval_train(obj, x, g, batch)?;
    Ok(tracker.update(g, s))
}

/// Value and gradient, with both checked for finiteness.
pub fn value_and_grad<O: Objective + ?Sized>(
    obj: &O,
    x: &[f64],
    g: usize,
    batch: &O::Batch,
) -> Result<(f64, Vec<f64>), ObjectiveError> {
    check_dim(obj, x, g)?;
    let (v, grad) = obj.value_and_grad(x, g, batch)?;
    if !v.is_finite() {
        return Err(ObjectiveError::NonFiniteValue(g));
    }
    if grad.iter().any(|d| !d.is_finite()) {
        return Err(ObjectiveError::NonFiniteGradient(g));
    }
    Ok((v, grad))
}

pub fn grad<O: Objective + ?Sized>(obj: &O, x: &[f64], g: usize, batch: &O::Batch) -> Result<Vec<f64>, ObjectiveError> {
    value_and_grad(obj, x, g, batch).map(|(_, d)| d)
}

/// Exponential moving averages of validation samples, one slot per node.
#[derive(Debug, Clone, PartialEq)]
pub struct ValTracker {
    running: Vec<Option<f64>>,
    decay: f64,
}

pub const DEFAULT_VAL_DECAY: f64 = 0.9;

impl ValTracker {
    pub fn new(nodes: usize, decay: f64) -> Self {
        assert!(decay > 0.0 && decay < 1.0, "decay must lie in (0, 1)");
        ValTracker { running: vec![None; nodes], decay }
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn update(&mut self, g: usize, sample: f64) -> f64 {
        let next = match self.running[g] {
            None => sample,
            Some(r) => self.decay * r + (1.0 - self.decay) * sample,
        };
        self.running[g] = Some(next);
        next
    }

    pub fn get(&self, g: usize) -> Option<f64> {
        self.running[g]
    }

    /// Running values, with untouched nodes reported as `fallback`.
    pub fn values(&self, fallback: f64) -> Vec<f64> {
        self.running.iter().map(|r| r.unwrap_or(fallback)).collect()
    }
}

/// `V(x, g) = |x - c_g|^2 / 2 + b_g + noise`, where the batch is the noise draw.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticObjective {
    pub centers: Vec<Vec<f64>>,
    pub offsets: Vec<f64>,
}

impl QuadraticObjective {
    pub fn new(centers: Vec<Vec<f64>>, offsets: Vec<f64>) -> Self {
        assert_eq!(centers.len(), offsets.len());
        QuadraticObjective { centers, offsets }
    }
}

impl Objective for QuadraticObjective {
    type Batch = f64;

    fn node_count(&self) -> usize {
        self.centers.len()
    }

    fn dim(&self, g: usize) -> usize {
        self.centers[g].len()
    }

    fn value(&self, x: &[f64], g: usize, noise: &f64) -> Result<f64, ObjectiveError> {
        let sq: f64 = x.iter().zip(&self.centers[g]).map(|(a, c)| (a - c) * (a - c)).sum();
        Ok(0.5 * sq + self.offsets[g] + noise)
    }

    fn value_and_grad(&self, x: &[f64], g: usize, noise: &f64) -> Result<(f64, Vec<f64>), ObjectiveError> {
        let grad: Vec<f64> = x.iter().zip(&self.centers[g]).map(|(a, c)| a - c).collect();
        Ok((self.value(x, g, noise)?, grad))
    }
}

/// Cross-entropy of one network per node on rows of a shared dataset.
/// The batch is a list of row indices.
#[derive(Debug, Clone)]
pub struct NetObjective<'a> {
    pub specs: Vec<NetSpec>,
    pub data: &'a Dataset,
}

impl<'a> NetObjective<'a> {
    pub fn new(specs: Vec<NetSpec>, data: &'a Dataset) -> Self {
        NetObjective { specs, data }
    }

    fn with_batch<T>(&self, idx: &[usize], f: impl FnOnce(Batch<'_>) -> Result<T, NnError>) -> Result<T, ObjectiveError> {
        let (inputs, labels) = self.data.gather(idx);
        Ok(f(Batch { inputs: &inputs, labels: &labels })?)
    }

    pub fn accuracy(&self, x: &[f64], g: usize, idx: &[usize]) -> Result<f64, ObjectiveError> {
        let params = NetParams { flat: x.to_vec() };
        self.with_batch(idx, |b| nn::accuracy(&self.specs[g], &params, &b))
    }
}

impl Objective for NetObjective<'_> {
    type Batch = [usize];

    fn node_count(&self) -> usize {
        self.specs.len()
    }

    fn dim(&self, g: usize) -> usize {
        self.specs[g].param_count()
    }

    fn value(&self, x: &[f64], g: usize, idx: &[usize]) -> Result<f64, ObjectiveError> {
        let params = NetParams { flat: x.to_vec() };
        self.with_batch(idx, |b| nn::loss(&self.specs[g], &params, &b))
    }

    fn value_and_grad(&self, x: &[f64], g: usize, idx: &[usize]) -> Result<(f64, Vec<f64>), ObjectiveError> {
        let params = NetParams { flat: x.to_vec() };
        self.with_batch(idx, |b| nn::loss_and_grad(&self.specs[g], &params, &b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_blobs;
    use crate::nn::init_params;
    use crate::rng::rng_for;
    use proptest::prelude::*;

    fn quad() -> QuadraticObjective {
        QuadraticObjective::new(vec![vec![1.0, -2.0, 0.5], vec![0.0; 3]], vec![0.7, 0.0])
    }

    #[test]
    fn quadratic_examples() {
        let q = quad();
        assert_eq!(eval_train(&q, &[1.0, -2.0, 0.5], 0, &0.0).unwrap(), 0.7);
        assert_eq!(eval_train(&q, &[1.0, 0.0, 0.0], 1, &0.0).unwrap(), 0.5);
        assert_eq!(grad(&q, &[1.0, -2.0, 0.5], 0, &0.0).unwrap(), vec![0.0; 3]);
        assert_eq!(grad(&q, &[0.25, -1.0, 3.0], 1, &0.0).unwrap(), vec![0.25, -1.0, 3.0]);
    }

    #[test]
    fn checks() {
        let q = quad();
        assert!(matches!(eval_train(&q, &[1.0], 0, &0.0), Err(ObjectiveError::DimensionMismatch { .. })));
        assert_eq!(eval_train(&q, &[0.0; 3], 5, &0.0), Err(ObjectiveError::UnknownNode(5)));
        assert_eq!(eval_train(&q, &[0.0; 3], 1, &f64::NAN), Err(ObjectiveError::NonFiniteValue(1)));
        assert_eq!(grad(&q, &[f64::INFINITY, 0.0, 0.0], 1, &0.0), Err(ObjectiveError::NonFiniteValue(1)));
    }

    #[test]
    fn tracker_ema() {
        let mut t = ValTracker::new(2, 0.9);
        assert_eq!(t.update(0, 2.0), 2.0);
        let mut u = ValTracker::new(1, 0.9);
        u.update(0, 1.0);
        assert!((u.update(0, 2.0) - 1.1).abs() < 1e-15);
        let mut c = ValTracker::new(1, 0.9);
        for _ in 0..500 {
            c.update(0, 3.25);
        }
        assert!((c.get(0).unwrap() - 3.25).abs() < 1e-12);
        assert_eq!(t.values(9.0), vec![2.0, 9.0]);
    }

    #[test]
    fn eval_val_feeds_tracker() {
        let q = quad();
        let mut t = ValTracker::new(2, 0.5);
        assert_eq!(eval_val(&q, &mut t, &[0.0; 3], 1, &1.0).unwrap(), 1.0);
        assert_eq!(eval_val(&q, &mut t, &[0.0; 3], 1, &3.0).unwrap(), 2.0);
    }

    #[test]
    fn net_objective_is_cross_entropy() {
        let data = make_blobs(60, 2, 3, 0.5, 3).unwrap();
        let spec = NetSpec::new(2, vec![6], 3);
        let p = init_params(&spec, &mut rng_for(3, &[]));
        let obj = NetObjective::new(vec![spec], &data);
        let idx: Vec<usize> = (0..20).collect();
        let v = eval_train(&obj, &p.flat, 0, &idx).unwrap();
        assert!(v >= 0.0);
        let (v2, g) = value_and_grad(&obj, &p.flat, 0, &idx).unwrap();
        assert_eq!(v, v2);
        assert_eq!(g.len(), obj.dim(0));
        let acc = obj.accuracy(&p.flat, 0, &idx).unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }

    #[test]
    fn quadratic_gradient_matches_differences() {
        let q = QuadraticObjective::new(vec![vec![0.3, -1.2, 2.0, 0.0]], vec![1.5]);
        let mut rng = rng_for(11, &[]);
        for _ in 0..20 {
            let x: Vec<f64> = (0..4).map(|_| rand::Rng::random_range(&mut rng, -3.0..3.0)).collect();
            let g = grad(&q, &x, 0, &0.0).unwrap();
            for i in 0..4 {
                let (mut a, mut b) = (x.clone(), x.clone());
                a[i] += 1e-5;
                b[i] -= 1e-5;
                let num = (q.value(&a, 0, &0.0).unwrap() - q.value(&b, 0, &0.0).unwrap()) / 2e-5;
                assert!((num - g[i]).abs() / g[i].abs().max(num.abs()).max(1e-6) <= 1e-4);
            }
        }
    }

    proptest! {
        #[test]
        fn tracker_is_order_deterministic(samples in proptest::collection::vec(-5.0f64..5.0, 1..40)) {
            let mut a = ValTracker::new(1, 0.9);
            let mut b = ValTracker::new(1, 0.9);
            for s in &samples {
                a.update(0, *s);
                b.update(0, *s);
            }
            prop_assert_eq!(a.get(0).unwrap().to_bits(), b.get(0).unwrap().to_bits());
        }
    }
}
