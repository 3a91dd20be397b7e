//! Lyapunov constants, their positivity conditions and the potential values
//! `Ψ_sgdm` and `Ψ_storm`.

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::numerics::{dist_sq, Matrix};
use crate::problem::{lagrangian_value, Snapshot, TwoBlockProblem};

pub const DEFAULT_DELTA: f64 = 1.0 / 6.0;
pub const DEFAULT_NU: f64 = 0.05;

/// Largest `τ·L_F` for which `C_B ≥ 0` when `δ = 1/6`.
pub fn tau_l_limit() -> f64 {
    (30f64.sqrt() - 2.0) / 13.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LyapunovConfig {
    pub l_f: f64,
    pub tau: f64,
    pub delta: f64,
    pub nu: f64,
    pub alpha: f64,
    pub beta: f64,
    pub eta_k: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    pub k5: f64,
    pub k6: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub l_bar: f64,
    pub l_tilde: f64,
    pub c_b: f64,
    pub c_x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Condition {
    pub name: &'static str,
    pub value: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PositivityReport {
    pub conditions: Vec<Condition>,
}

impl PositivityReport {
    pub fn all_hold(&self) -> bool {
        self.conditions.iter().all(|c| c.holds)
    }
}

fn check_positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(name, format!("must be positive and finite, got {v}")))
    }
}

/// `L̃_F = L_F + K₃ + K₄`, which only depends on `(L_F, τ, δ)`.
pub fn l_tilde(l_f: f64, tau: f64, delta: f64) -> f64 {
    l_f + tau * l_f * l_f / delta + 3.0 * delta * tau * l_f * l_f
}

impl LyapunovConfig {
    pub fn new(l_f: f64, tau: f64, delta: f64, nu: f64, alpha: f64, beta: f64, eta_k: f64) -> Result<Self> {
        check_positive("lipschitz", l_f)?;
        check_positive("tau", tau)?;
        check_positive("delta", delta)?;
        check_positive("nu", nu)?;
        check_positive("eta", eta_k)?;
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(invalid("alpha", format!("must lie in (0, 1), got {alpha}")));
        }
        if !(0.0..1.0).contains(&beta) {
            return Err(invalid("beta", format!("must lie in [0, 1), got {beta}")));
        }
        let k1 = 3.0 * delta / tau;
        let k2 = 2.0 / tau - l_f - 3.0 * delta * tau * (1.0 / tau + l_f).powi(2);
        let k3 = tau * l_f * l_f / delta;
        let k4 = 3.0 * delta * tau * l_f * l_f;
        let k5 = (1.0 - alpha) / eta_k - 2.0 * l_f;
        let k6 = alpha / eta_k + 2.0 * l_f * beta * beta;
        let l_bar = 2.0 * l_f + k3 + k4;
        let c4 = (l_bar + 2.0 * l_f * beta * beta / alpha) / (1.0 - 2.0 * alpha - nu);
        Ok(Self {
            l_f,
            tau,
            delta,
            nu,
            alpha,
            beta,
            eta_k,
            k1,
            k2,
            k3,
            k4,
            k5,
            k6,
            c1: k1,
            c2: 0.5 * (k2 - k1 + k3),
            c3: k4,
            c4,
            l_bar,
            l_tilde: l_f + k3 + k4,
            c_b: 0.5 * (k2 - k3 - k1),
            c_x: nu * c4,
        })
    }

    /// Constants for `Ψ_storm`, which has no momentum terms. `K₅`, `K₆` and
    /// `C₄` are those of `α = β = 0` with the StoRM step.
    pub fn for_storm(l_f: f64, tau: f64, delta: f64, nu: f64, eta_k: f64) -> Result<Self> {
        let mut c = Self::new(l_f, tau, delta, nu, 0.5, 0.0, eta_k)?;
        c.alpha = 0.0;
        c.k5 = 1.0 / eta_k - 2.0 * l_f;
        c.k6 = 0.0;
        c.c4 = c.l_bar / (1.0 - nu);
        c.c_x = nu * c.c4;
        Ok(c)
    }

    /// The step `η_k = (1 − α)/(L̄_F + (1 + ν)C₄)`, the largest one for which
    /// the first positivity condition holds.
    pub fn theory_step(l_f: f64, tau: f64, delta: f64, nu: f64, alpha: f64, beta: f64) -> Result<f64> {
        let probe = Self::new(l_f, tau, delta, nu, alpha, beta, 1.0)?;
        Ok((1.0 - alpha) / (probe.l_bar + (1.0 + nu) * probe.c4))
    }

    pub fn positivity(&self) -> PositivityReport {
        let slack = 1e-12 * self.c4.abs().max(1.0);
        let c = |name, value: f64, holds: bool| Condition { name, value, holds };
        let first = self.k5 - self.k3 - self.c3 - self.c4 - self.nu * self.c4;
        let second = self.c4 - self.k6 - self.nu * self.c4;
        PositivityReport {
            conditions: vec![
                c("alpha < (1 - nu)/2", (1.0 - self.nu) / 2.0 - self.alpha, self.alpha < (1.0 - self.nu) / 2.0),
                c("K5 - K3 - C3 - C4 >= nu C4", first, first >= -slack),
                c("C4 - K6 >= nu C4", second, second >= -slack),
                c("C4 > 0", self.c4, self.c4 > 0.0),
                c("C_B > 0", self.c_b, self.c_b > 0.0),
                c("C1 > 0", self.c1, self.c1 > 0.0),
                c("C2 > 0", self.c2, self.c2 > 0.0),
                c("C_x > 0", self.c_x, self.c_x > 0.0),
            ],
        }
    }
}

/// Squared half-differences around iterate `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Deltas {
    /// `‖B^{k+1} − B^k‖²/2`
    pub b_next: f64,
    /// `‖B^k − B^{k−1}‖²/2`
    pub b_cur: f64,
    /// `‖x^{k+1} − x^k‖²/2`
    pub x_next: f64,
    /// `‖x^k − x^{k−1}‖²/2`
    pub x_cur: f64,
}

impl Deltas {
    pub fn between(x: [&[f64]; 3], b: [&Matrix; 3]) -> Self {
        Self {
            b_next: 0.5 * dist_sq(b[2].as_slice(), b[1].as_slice()),
            b_cur: 0.5 * dist_sq(b[1].as_slice(), b[0].as_slice()),
            x_next: 0.5 * dist_sq(x[2], x[1]),
            x_cur: 0.5 * dist_sq(x[1], x[0]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Potential {
    Sgdm,
    Storm,
}

/// `Ψ = 𝓛^k − C₁Δ_B^{k+1} + C₂Δ_B^k − C₃Δ_x^{k+1} (+ C₄Δ_x^k for SGDM)`.
pub fn psi(cfg: &LyapunovConfig, lagrangian_k: f64, d: &Deltas, kind: Potential) -> f64 {
    let base = lagrangian_k - cfg.c1 * d.b_next + cfg.c2 * d.b_cur - cfg.c3 * d.x_next;
    match kind {
        Potential::Sgdm => base + cfg.c4 * d.x_cur,
        Potential::Storm => base,
    }
}

/// `Ψ` at the middle iterate of a window of three consecutive snapshots.
pub fn lyapunov_value<P: TwoBlockProblem + ?Sized>(
    cfg: &LyapunovConfig,
    problem: &P,
    window: &[Snapshot],
    kind: Potential,
) -> Result<f64> {
    if window.len() < 3 {
        return Err(Error::InsufficientHistory {
            needed: 3,
            have: window.len(),
        });
    }
    let [s0, s1, s2] = [&window[0], &window[1], &window[2]];
    let lag = lagrangian_value(problem, &s1.x, &s1.b, &s1.lam)?;
    let d = Deltas::between([&s0.x, &s1.x, &s2.x], [&s0.b, &s1.b, &s2.b]);
    Ok(psi(cfg, lag, &d, kind))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn valid(l_f: f64) -> LyapunovConfig {
        let tau = 0.2 / l_f;
        let eta = LyapunovConfig::theory_step(l_f, tau, DEFAULT_DELTA, DEFAULT_NU, 0.3, 0.5).unwrap();
        LyapunovConfig::new(l_f, tau, DEFAULT_DELTA, DEFAULT_NU, 0.3, 0.5, eta).unwrap()
    }

    #[test]
    fn valid_configs_are_positive() {
        for l_f in [0.1, 1.0, 7.5, 300.0] {
            let r = valid(l_f).positivity();
            assert!(r.all_hold(), "{r:?}");
        }
    }

    #[test]
    fn theory_step_matches_closed_form() {
        let (l, tau, a, b, nu) = (2.0, 0.05, 0.3, 0.5, DEFAULT_NU);
        let eta_k = LyapunovConfig::theory_step(l, tau, DEFAULT_DELTA, nu, a, b).unwrap();
        let c = LyapunovConfig::new(l, tau, DEFAULT_DELTA, nu, a, b, eta_k).unwrap();
        let eta = ((1.0 - 2.0 * a - nu) / 2.0) / (c.l_bar / l + (1.0 + nu) * b * b / ((1.0 - a) * a));
        assert!((eta_k * l - eta).abs() < 1e-14);
    }

    #[test]
    fn c_b_closed_form() {
        // With δ = 1/6, 2C_B/L = 1/t − 13t/2 − 2 for t = τL.
        let (l, t) = (3.0, 0.15);
        let c = LyapunovConfig::new(l, t / l, DEFAULT_DELTA, DEFAULT_NU, 0.2, 0.1, 0.01).unwrap();
        assert!((2.0 * c.c_b / l - (1.0 / t - 6.5 * t - 2.0)).abs() < 1e-12);
        let edge = tau_l_limit();
        let c = LyapunovConfig::new(l, edge / l, DEFAULT_DELTA, DEFAULT_NU, 0.2, 0.1, 0.01).unwrap();
        assert!(c.c_b.abs() < 1e-12);
    }

    #[test]
    fn large_momentum_breaks_positivity() {
        let c = LyapunovConfig::new(1.0, 0.1, DEFAULT_DELTA, DEFAULT_NU, 0.905, 0.905, 0.01).unwrap();
        assert!(!c.positivity().all_hold());
        assert!(LyapunovConfig::new(0.0, 0.1, DEFAULT_DELTA, DEFAULT_NU, 0.3, 0.3, 0.01).is_err());
    }

    #[test]
    fn constant_window_gives_lagrangian() {
        let d = Deltas::between([&[1.0], &[1.0], &[1.0]], [&Matrix::zeros(1, 1), &Matrix::zeros(1, 1), &Matrix::zeros(1, 1)]);
        assert_eq!(psi(&valid(1.0), 4.25, &d, Potential::Sgdm), 4.25);
        assert_eq!(psi(&valid(1.0), 4.25, &d, Potential::Storm), 4.25);
    }
}
