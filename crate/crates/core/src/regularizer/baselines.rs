//! Regularizers of the comparison methods: the weakly convex `λ|z² - 1|`
//! and the smooth `log cosh(|z| - 1)`.

use super::sign;
use crate::error::{invalid, Result};

/// `λ Σ |z_i² - 1|`.
pub fn wc_reg_value(z: &[f64], lambda: f64) -> f64 {
    lambda * z.iter().map(|v| (v * v - 1.0).abs()).sum::<f64>()
}

/// Minimizer of `λ|v² - 1| + (v - y)² / (2τ)`.
///
/// The penalty has curvature `-2λ` inside `(-1, 1)`, so the subproblem is
/// strongly convex exactly when `2τλ < 1`; other combinations are rejected.
pub fn prox_wc_scalar(y: f64, tau: f64, lambda: f64) -> Result<f64> {
    check_wc(tau, lambda)?;
    let t = 2.0 * tau * lambda;
    let a = y.abs();
    let r = if a > 1.0 + t {
        a / (1.0 + t)
    } else if a < 1.0 - t {
        a / (1.0 - t)
    } else {
        1.0
    };
    Ok(sign(y) * r)
}

pub fn prox_wc(y: &[f64], tau: f64, lambda: f64) -> Result<Vec<f64>> {
    check_wc(tau, lambda)?;
    y.iter().map(|&v| prox_wc_scalar(v, tau, lambda)).collect()
}

fn check_wc(tau: f64, lambda: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(invalid("tau", format!("prox step must be positive, got {tau}")));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(invalid("lambda", format!("must be nonnegative, got {lambda}")));
    }
    if 2.0 * tau * lambda >= 1.0 {
        return Err(invalid(
            "tau",
            format!("2·tau·lambda = {} >= 1: prox subproblem is not strongly convex", 2.0 * tau * lambda),
        ));
    }
    Ok(())
}

/// `log cosh(a)` without overflow for large `|a|`.
pub(crate) fn log_cosh(a: f64) -> f64 {
    let a = a.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// Value of `Σ log cosh(|z_i| - 1)` and its gradient
/// `tanh(|z_i| - 1) · sign(z_i)`.
pub fn logcosh_reg(z: &[f64]) -> (f64, Vec<f64>) {
    let value = z.iter().map(|v| log_cosh(v.abs() - 1.0)).sum();
    let grad = z.iter().map(|&v| (v.abs() - 1.0).tanh() * sign(v)).collect();
    (value, grad)
}
