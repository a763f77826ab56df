//! Particle dynamics on the semi-discrete space.
//!
//! One iteration of the first-order system is: train every node (step 1),
//! then move particles along the graph (step 2). The second-order system adds
//! a per-node potential `phi` that is integrated after the mutation step
//! (step 3) and drives the mutation rates instead of the score.
//!
//! Mutation rates are upwind: along any edge at most one direction carries a
//! positive rate, and it always points from the higher to the lower score
//! (first order) or along the configured potential orientation (second
//! order).

mod energy;
mod ensemble;
mod frozen;
mod potential;
mod rates;
mod schedule;
mod train;

pub use energy::{energy, stationary_oracle};
pub use ensemble::{apply_mutation, ParticleEnsemble, Transfers};
pub use frozen::{frozen_flow, FlowTrace};
pub use potential::{restart_check, restart_drift, update_potential, Potential};
pub use rates::{mutation_rates_first, mutation_rates_second, node_scores, MoveRates};
pub use schedule::{cosine_lr, Schedule};
pub use train::{train_step, NodeState, TrainRule};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite gradient entry at index {0}")]
    NonFiniteGradient(usize),
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("t_cur = {t_cur} outside [0, {period}]")]
    OutOfPeriod { t_cur: f64, period: f64 },
    #[error("no stationary solution for the given values")]
    NoSolution,
    #[error("invalid dynamics parameter: {0}")]
    InvalidParam(&'static str),
}

/// a^- = max(0, -a).
#[inline]
pub fn negative_part(a: f64) -> f64 {
    if a < 0.0 {
        -a
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Order {
    #[default]
    FirstOrder,
    SecondOrder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateMode {
    /// Each movable particle jumps independently (integer counts).
    #[default]
    Sampled,
    /// Counts are replaced by their expected values (fractional masses).
    Expected,
}

/// Which way particles flow under the second-order rates.
///
/// `TowardHighPhi` is the literal reading of the rate `(phi(g) - phi(g'))^-`:
/// mass moves to neighbours with a larger potential. Because the potential
/// is pushed down fastest at crowded, high-loss nodes, a large potential
/// marks a good node, so this orientation is the descent direction.
/// `TowardLowPhi` mirrors it and exists for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flow {
    #[default]
    TowardHighPhi,
    TowardLowPhi,
}

/// Density term of the score: `f^beta` (porous-medium form) or `log f`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyForm {
    #[default]
    Power,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsParams {
    /// Mutation coefficient.
    pub kappa: f64,
    /// Exponent of the density term.
    pub beta: f64,
    /// Friction; only used when `friction_term` is on.
    pub gamma: f64,
    pub order: Order,
    pub rate_mode: RateMode,
    pub form: EnergyForm,
    pub flow: Flow,
    /// Include `-tau/2 |v|^2` in the potential update.
    pub kinetic_term: bool,
    /// Include `-tau gamma phi` in the potential update.
    pub friction_term: bool,
    /// Use the verbatim restart quantity instead of the signed loss drift.
    pub literal_restart: bool,
    /// Reset the potential when the restart quantity turns positive.
    pub restart: bool,
    /// Apply the quadratic potential term as `tau q / (1 + tau q)`.
    pub saturate_quadratic: bool,
}

impl Default for DynamicsParams {
    fn default() -> Self {
        DynamicsParams {
            kappa: 1.0,
            beta: 1.0,
            gamma: 0.0,
            order: Order::FirstOrder,
            rate_mode: RateMode::Sampled,
            form: EnergyForm::Power,
            flow: Flow::TowardHighPhi,
            kinetic_term: false,
            friction_term: false,
            literal_restart: false,
            restart: true,
            saturate_quadratic: true,
        }
    }
}

impl DynamicsParams {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(DynamicsError::InvalidParam("kappa must be > 0"));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(DynamicsError::InvalidParam("beta must be > 0"));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(DynamicsError::InvalidParam("gamma must be >= 0"));
        }
        Ok(())
    }

    /// Density contribution to a node's score.
    #[inline]
    pub fn density_term(&self, f: f64) -> f64 {
        match self.form {
            EnergyForm::Power => f.max(0.0).powf(self.beta),
            EnergyForm::Log => f.max(f64::MIN_POSITIVE).ln(),
        }
    }
}
