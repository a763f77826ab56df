use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::DynamicsError;

/// Cosine interpolation from `lam_start` (t = 0) to `lam_final` (t = period).
pub fn cosine_lr(t_cur: f64, period: f64, lam_start: f64, lam_final: f64) -> Result<f64, DynamicsError> {
    if !(period > 0.0) || !(0.0..=period).contains(&t_cur) {
        return Err(DynamicsError::OutOfPeriod { t_cur, period });
    }
    if t_cur == 0.0 {
        return Ok(lam_start);
    }
    if t_cur == period {
        return Ok(lam_final);
    }
    Ok(lam_final + 0.5 * (lam_start - lam_final) * (1.0 + (PI * t_cur / period).cos()))
}

/// Warm-restart cosine schedule on an iteration clock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub lam_start: f64,
    pub lam_final: f64,
    /// Iterations per restart cycle.
    pub period: usize,
}

impl Schedule {
    /// Step size at global iteration `k`; restarts every `period` iterations.
    pub fn tau(&self, k: usize) -> f64 {
        let period = self.period.max(1);
        let t = (k % period) as f64;
        cosine_lr(t, period as f64, self.lam_start, self.lam_final).expect("t within period")
    }
}
