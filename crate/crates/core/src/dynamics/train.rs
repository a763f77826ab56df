use serde::{Deserialize, Serialize};

use super::DynamicsError;

/// Parameters and velocity of one node. All particles on a node share it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeState {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

impl NodeState {
    pub fn at_rest(x: Vec<f64>) -> Self {
        let v = vec![0.0; x.len()];
        NodeState { x, v }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(&self.v).all(|a| a.is_finite())
    }

    /// Sum of v_i^2 / 2.
    pub fn kinetic(&self) -> f64 {
        0.5 * self.v.iter().map(|a| a * a).sum::<f64>()
    }
}

/// How a gradient is turned into a parameter update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainRule {
    /// Coefficient multiplying `v` in the velocity update.
    pub damping: f64,
    /// Plain gradient step `x' = x - tau grad` (velocity untouched).
    pub pure_gradient: bool,
}

impl Default for TrainRule {
    fn default() -> Self {
        TrainRule { damping: 1.0, pure_gradient: false }
    }
}

/// One training step.
///
/// Momentum form: `x' = x + tau v`, `v' = v - tau (c v + grad)`. The position
/// update uses the velocity from before the step.
pub fn train_step(
    state: &mut NodeState,
    grad: &[f64],
    tau: f64,
    rule: TrainRule,
) -> Result<(), DynamicsError> {
    if grad.len() != state.x.len() {
        return Err(DynamicsError::DimensionMismatch { expected: state.x.len(), got: grad.len() });
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(DynamicsError::NonFiniteGradient(i));
    }
    if !(tau > 0.0) {
        return Err(DynamicsError::InvalidParam("tau must be > 0"));
    }
    if rule.pure_gradient {
        for (x, g) in state.x.iter_mut().zip(grad) {
            *x -= tau * g;
        }
        return Ok(());
    }
    let c = rule.damping;
    for ((x, v), g) in state.x.iter_mut().zip(state.v.iter_mut()).zip(grad) {
        let v0 = *v;
        *x += tau * v0;
        *v = v0 - tau * (c * v0 + g);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st(x: &[f64], v: &[f64]) -> NodeState {
        NodeState { x: x.to_vec(), v: v.to_vec() }
    }

    #[test]
    fn momentum_step_from_rest() {
        let mut s = st(&[0.0], &[0.0]);
        train_step(&mut s, &[1.0], 0.1, TrainRule::default()).unwrap();
        assert_eq!(s.x, vec![0.0]);
        assert!((s.v[0] + 0.1).abs() < 1e-15);
    }

    #[test]
    fn momentum_step_coasting() {
        let mut s = st(&[1.0], &[2.0]);
        train_step(&mut s, &[0.0], 0.5, TrainRule::default()).unwrap();
        assert_eq!(s.x, vec![2.0]);
        assert_eq!(s.v, vec![1.0]);
    }

    #[test]
    fn fixed_point() {
        let mut s = st(&[0.3, -1.0], &[0.0, 0.0]);
        let before = s.clone();
        train_step(&mut s, &[0.0, 0.0], 0.05, TrainRule::default()).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn pure_gradient_flag() {
        let mut s = st(&[1.0], &[5.0]);
        train_step(&mut s, &[2.0], 0.25, TrainRule { pure_gradient: true, ..Default::default() }).unwrap();
        assert_eq!(s.x, vec![0.5]);
        assert_eq!(s.v, vec![5.0]);
    }

    #[test]
    fn errors() {
        let mut s = st(&[1.0], &[0.0]);
        assert_eq!(
            train_step(&mut s, &[1.0, 2.0], 0.1, TrainRule::default()),
            Err(DynamicsError::DimensionMismatch { expected: 1, got: 2 })
        );
        assert_eq!(
            train_step(&mut s, &[f64::NAN], 0.1, TrainRule::default()),
            Err(DynamicsError::NonFiniteGradient(0))
        );
    }
}
