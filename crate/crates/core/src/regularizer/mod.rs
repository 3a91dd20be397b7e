//! The W-type regularizer `h(z) = λ Σ ||z_i| - 1|`, its Fenchel conjugate and
//! the proximal maps used by the primal-dual solver, together with the
//! regularizers used by the baseline methods.

mod baselines;
pub mod oracle;

pub use baselines::{logcosh_reg, prox_wc, prox_wc_scalar, wc_reg_value};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Sign with `sign(0) = +1`, including `-0.0`.
#[inline]
pub fn sign(v: f64) -> f64 {
    if v < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// A value of the extended real line `(-inf, +inf]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtScalar {
    Finite(f64),
    PosInf,
}

impl ExtScalar {
    pub fn is_finite(self) -> bool {
        matches!(self, ExtScalar::Finite(_))
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            ExtScalar::Finite(v) => Some(v),
            ExtScalar::PosInf => None,
        }
    }

    /// `+inf` maps to `f64::INFINITY`.
    pub fn to_f64(self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }
}

/// Closed interval `[lo, hi]`; either end may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    /// Closest point of the interval to `v`.
    pub fn project(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }

    pub fn dist(&self, v: f64) -> f64 {
        (v - self.project(v)).abs()
    }
}

/// `h(z) = λ Σ ||z_i| - 1|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WRegularizer {
    lambda: f64,
}

impl WRegularizer {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(invalid("lambda", format!("must be positive, got {lambda}")));
        }
        Ok(Self { lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn value(&self, z: &[f64]) -> f64 {
        self.lambda * z.iter().map(|v| (v.abs() - 1.0).abs()).sum::<f64>()
    }

    /// `h*(x) = Σ |x_i|` on the box `[-λ, λ]^n`, `+inf` outside.
    pub fn conj_value(&self, x: &[f64]) -> ExtScalar {
        let mut acc = 0.0;
        for v in x {
            if v.abs() > self.lambda {
                return ExtScalar::PosInf;
            }
            acc += v.abs();
        }
        ExtScalar::Finite(acc)
    }

    /// Proximal map of `tau * h*` at a scalar: soft-thresholding by `tau`
    /// followed by clipping to `[-λ, λ]`.
    pub fn prox_conj_scalar(&self, y: f64, tau: f64) -> f64 {
        let lam = self.lambda;
        if y > lam + tau {
            lam
        } else if y > tau {
            y - tau
        } else if y >= -tau {
            0.0
        } else if y >= -lam - tau {
            y + tau
        } else {
            -lam
        }
    }

    /// Elementwise `prox_{tau h*}(y)`.
    pub fn prox_conj(&self, y: &[f64], tau: f64) -> Result<Vec<f64>> {
        check_step(tau)?;
        Ok(y.iter().map(|&v| self.prox_conj_scalar(v, tau)).collect())
    }

    /// Proximal map of `tau * h` at a scalar.
    ///
    /// For `y != 0` the unique minimizer lies on the side of `y` and is a soft
    /// threshold of `|y|` towards 1. At `y == 0` the two minimizers
    /// `±min(τλ, 1)` are symmetric and `0` is returned so the map stays odd.
    pub fn prox_h_scalar(&self, y: f64, tau: f64) -> f64 {
        if y == 0.0 {
            return 0.0;
        }
        let t = tau * self.lambda;
        let a = y.abs();
        let r = if a > 1.0 + t {
            a - t
        } else if a < 1.0 - t {
            a + t
        } else {
            1.0
        };
        sign(y) * r
    }

    /// Elementwise `prox_{tau h}(y)`.
    pub fn prox_h(&self, y: &[f64], tau: f64) -> Result<Vec<f64>> {
        check_step(tau)?;
        Ok(y.iter().map(|&v| self.prox_h_scalar(v, tau)).collect())
    }

    /// Subdifferential of the scalar conjugate at `x`, which must lie in
    /// `[-λ, λ]`. The endpoints pick up the normal cone of the box.
    pub fn subdiff_conj(&self, x: f64) -> Result<Interval> {
        let lam = self.lambda;
        if !(x.abs() <= lam) {
            return Err(Error::OutsideDomain { value: x, lambda: lam });
        }
        Ok(if x == 0.0 {
            Interval { lo: -1.0, hi: 1.0 }
        } else if x == lam {
            Interval {
                lo: 1.0,
                hi: f64::INFINITY,
            }
        } else if x == -lam {
            Interval {
                lo: f64::NEG_INFINITY,
                hi: -1.0,
            }
        } else {
            Interval::point(sign(x))
        })
    }

    /// A subgradient of the scalar `h` at `z`, using `sign(0) = +1`.
    pub fn subgrad_scalar(&self, z: f64) -> f64 {
        self.lambda * sign(z.abs() - 1.0) * sign(z)
    }
}

fn check_step(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(invalid("tau", format!("prox step must be positive, got {tau}")));
    }
    Ok(())
}
