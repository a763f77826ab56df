use super::{DynamicsError, EnergyForm};

/// Free energy of a graph marginal.
///
/// Power form: `sum f^(beta+1) / (beta+1) + sum f V`.
/// Log form: `sum f log f + sum f V`, with `0 log 0 = 0`.
pub fn energy(f: &[f64], values: &[f64], beta: f64, form: EnergyForm) -> f64 {
    assert_eq!(f.len(), values.len());
    let internal: f64 = match form {
        EnergyForm::Power => f.iter().map(|&p| p.max(0.0).powf(beta + 1.0) / (beta + 1.0)).sum(),
        EnergyForm::Log => f.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum(),
    };
    let potential: f64 = f.iter().zip(values).map(|(p, v)| p * v).sum();
    internal + potential
}

/// Fixed point of the first-order power-form dynamics with frozen values:
/// `f*(g) = max(0, c - V(g))^(1/beta)` with `c` chosen so that `sum f* = 1`.
/// Solved by bisection on `c`.
pub fn stationary_oracle(values: &[f64], beta: f64) -> Result<Vec<f64>, DynamicsError> {
    if values.is_empty() || !(beta > 0.0) || values.iter().any(|v| !v.is_finite()) {
        return Err(DynamicsError::NoSolution);
    }
    let inv = 1.0 / beta;
    let mass = |c: f64| -> f64 { values.iter().map(|&v| (c - v).max(0.0).powf(inv)).sum() };
    let vmin = values.iter().copied().fold(f64::INFINITY, f64::min);
    let (mut lo, mut hi) = (vmin, vmin + 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if mass(mid) < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let f: Vec<f64> = values.iter().map(|&v| (hi - v).max(0.0).powf(inv)).collect();
    let s: f64 = f.iter().sum();
    if !(s > 0.0) || !s.is_finite() {
        return Err(DynamicsError::NoSolution);
    }
    Ok(f.into_iter().map(|p| p / s).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_node_power() {
        assert!((energy(&[1.0], &[3.0], 1.0, EnergyForm::Power) - 3.5).abs() < 1e-15);
    }

    #[test]
    fn log_form_uniform_and_limit() {
        let m = 5;
        let f = vec![1.0 / m as f64; m];
        let e = energy(&f, &vec![0.0; m], 1.0, EnergyForm::Log);
        assert!((e + (m as f64).ln()).abs() < 1e-12);
        assert_eq!(energy(&[1.0, 0.0], &[2.5, 7.0], 1.0, EnergyForm::Log), 2.5);
    }

    #[test]
    fn oracle_cases() {
        let u = stationary_oracle(&[0.3; 4], 2.0).unwrap();
        assert!(u.iter().all(|p| (p - 0.25).abs() < 1e-12));
        let f = stationary_oracle(&[0.0, 0.5], 1.0).unwrap();
        assert!((f[0] - 0.75).abs() < 1e-12 && (f[1] - 0.25).abs() < 1e-12);
        let f = stationary_oracle(&[0.0, 10.0], 1.0).unwrap();
        assert_eq!(f, vec![1.0, 0.0]);
        assert!(stationary_oracle(&[f64::NAN], 1.0).is_err());
    }

    #[test]
    fn oracle_satisfies_level_condition() {
        let v = [0.1, 0.4, 0.25, 2.0, 0.0];
        for beta in [0.5, 1.0, 3.0] {
            let f = stationary_oracle(&v, beta).unwrap();
            assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            let levels: Vec<f64> = f.iter().zip(&v).filter(|(p, _)| **p > 0.0).map(|(p, x)| p.powf(beta) + x).collect();
            assert!(levels.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-9));
        }
    }
}
