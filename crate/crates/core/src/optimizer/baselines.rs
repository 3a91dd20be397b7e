//! Comparison methods. Each one trains the network directly on
//! `f(x) + (1/n) Σ_j r(D_j(x))` with the momentum update of the StoM
//! x-step and no auxiliary dual variables.

use serde::{Deserialize, Serialize};

use super::Batch;
use crate::error::{invalid, Error, Result};
use crate::metrics::quantization_error;
use crate::numerics::{Matrix, Rng, Vector};
use crate::problem::HashingProblem;
use crate::regularizer::{logcosh_reg, prox_wc_scalar, sign, wc_reg_value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    /// Sign subgradient of `λ Σ ||u| − 1|`.
    Sgdm,
    /// Weakly convex `λ Σ |u² − 1|` handled through per-sample auxiliary
    /// codes `z_j = prox(u_j)` and the coupling `(γ/2)‖u_j − z_j‖²`.
    SpgdWcr,
    /// Smooth `λ Σ log cosh(|u| − 1)`.
    Dhn,
}

impl BaselineKind {
    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Sgdm => "sgdm",
            BaselineKind::SpgdWcr => "spgd-wcr",
            BaselineKind::Dhn => "dhn",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BaselineParams {
    pub kind: BaselineKind,
    pub lambda: f64,
    /// Coupling weight of the auxiliary codes (SPGD-WCR only).
    pub gamma: f64,
    pub eta: f64,
    pub alpha: f64,
    pub beta: f64,
    pub batch: Batch,
}

impl BaselineParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(invalid("lambda", format!("must be nonnegative, got {}", self.lambda)));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(invalid("eta", format!("must be positive, got {}", self.eta)));
        }
        if !(0.0..1.0).contains(&self.alpha) || !(0.0..1.0).contains(&self.beta) {
            return Err(invalid("alpha", "momentum weights must lie in [0, 1)"));
        }
        if self.batch == Batch::Sampled(0) {
            return Err(invalid("batch", "must be positive"));
        }
        if self.kind == BaselineKind::SpgdWcr {
            if !(self.gamma > 0.0) {
                return Err(invalid("gamma", "must be positive"));
            }
            prox_wc_scalar(0.0, 1.0 / self.gamma, self.lambda)?;
        }
        Ok(())
    }

    /// `∇_u r(u)` of one code, written into `out`.
    fn reg_grad(&self, u: &[f64], out: &mut [f64]) {
        let lam = self.lambda;
        match self.kind {
            BaselineKind::Sgdm => {
                for (o, &v) in out.iter_mut().zip(u) {
                    *o = lam * sign(v.abs() - 1.0) * sign(v);
                }
            }
            BaselineKind::SpgdWcr => {
                let t = 1.0 / self.gamma;
                for (o, &v) in out.iter_mut().zip(u) {
                    let z = prox_wc_scalar(v, t, lam).unwrap_or(v);
                    *o = self.gamma * (v - z);
                }
            }
            BaselineKind::Dhn => {
                let (_, g) = logcosh_reg(u);
                for (o, gv) in out.iter_mut().zip(g) {
                    *o = lam * gv;
                }
            }
        }
    }

    /// `(1/n) Σ_j r(u_j)` with the method's nominal regularizer.
    fn reg_value(&self, u: &Matrix) -> f64 {
        let s: f64 = match self.kind {
            BaselineKind::Sgdm => self.lambda * u.as_slice().iter().map(|v| (v.abs() - 1.0).abs()).sum::<f64>(),
            BaselineKind::SpgdWcr => wc_reg_value(u.as_slice(), self.lambda),
            BaselineKind::Dhn => self.lambda * logcosh_reg(u.as_slice()).0,
        };
        s / u.rows() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineRecord {
    pub iteration: usize,
    pub objective: f64,
    pub quant_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineSummary {
    pub x: Vector,
    pub final_objective: f64,
    pub iterations: usize,
}

/// Objective `f + (1/n)Σ r(D_j)` at `x`.
pub fn baseline_objective(p: &HashingProblem, params: &BaselineParams, x: &[f64]) -> Result<(f64, Matrix)> {
    let u = p.spec().forward_all(x, p.features())?;
    Ok((p.pair_loss(&u) + params.reg_value(&u), u))
}

/// `T` momentum steps `z = x + β(x − x_prev)`, `x⁺ = x + α(x − x_prev) − η g(z)`
/// with mini-batches drawn from the same stream as the DualHash solver.
pub fn run_baseline<F>(
    p: &HashingProblem,
    params: &BaselineParams,
    x1: Vector,
    seed: u64,
    iterations: usize,
    log_every: usize,
    mut sink: F,
) -> Result<BaselineSummary>
where
    F: FnMut(&BaselineRecord),
{
    params.validate()?;
    if iterations == 0 {
        return Err(invalid("iterations", "must be at least 1"));
    }
    let mut rng: Rng = Rng::seed_from(seed).split(super::STREAM_BATCHES);
    let mut x = x1;
    let mut x_prev = x.clone();
    let (initial, _) = baseline_objective(p, params, &x)?;
    let limit = 1e6 * initial.abs().max(1e-12);
    let mut last = initial;
    for k in 1..=iterations {
        let batch = params.batch.draw(&mut rng, p.features().rows())?;
        let disp: Vec<f64> = x.iter().zip(x_prev.iter()).map(|(a, b)| a - b).collect();
        let z: Vec<f64> = x.iter().zip(&disp).map(|(v, d)| v + params.beta * d).collect();
        let g = p.grad_batch_with(&z, &batch, |_, u, out| params.reg_grad(u, out))?;
        let next: Vec<f64> = x
            .iter()
            .zip(&disp)
            .zip(g.iter())
            .map(|((v, d), gv)| v + params.alpha * d - params.eta * gv)
            .collect();
        let next = Vector::new(next)?;
        if !next.is_finite() {
            return Err(Error::Diverged {
                iteration: k,
                reason: "non-finite iterate".into(),
            });
        }
        x_prev = std::mem::replace(&mut x, next);
        let log_now = log_every > 0 && (k % log_every == 0 || k == iterations);
        if log_now {
            let (obj, u) = baseline_objective(p, params, &x)?;
            if !obj.is_finite() || obj.abs() > limit {
                return Err(Error::Diverged {
                    iteration: k,
                    reason: format!("objective {obj:e} left the admissible range"),
                });
            }
            last = obj;
            sink(&BaselineRecord {
                iteration: k,
                objective: obj,
                quant_error: quantization_error(&u),
            });
        }
    }
    if log_every == 0 {
        last = baseline_objective(p, params, &x)?.0;
    }
    Ok(BaselineSummary {
        x,
        final_objective: last,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_pairs, gen_gaussian_clusters, ClusterSpec, PairMode, Split};
    use crate::model::MlpSpec;

    fn problem() -> (HashingProblem, Vector) {
        let mut rng = Rng::seed_from(11);
        let ds = gen_gaussian_clusters(
            &mut rng,
            &ClusterSpec {
                classes: 3,
                per_class: 10,
                dim: 6,
                query_fraction: 0.0,
                ..ClusterSpec::default()
            },
        )
        .unwrap();
        let (f, l) = ds.part(Split::Train);
        let pairs = build_pairs(&l, PairMode::Sampled { per_anchor: 4 }, &mut rng).unwrap();
        let spec = MlpSpec::new(vec![6, 8, 4]).unwrap();
        let x = spec.init_params(&mut rng);
        (HashingProblem::new(f, l, spec, 0.8, pairs, 3.0, 0.05).unwrap(), x)
    }

    fn params(kind: BaselineKind, lambda: f64) -> BaselineParams {
        BaselineParams {
            kind,
            lambda,
            gamma: 3.0,
            eta: 0.05,
            alpha: 0.5,
            beta: 0.5,
            batch: Batch::Sampled(8),
        }
    }

    #[test]
    fn zero_weight_baselines_coincide() {
        let (p, x) = problem();
        let runs: Vec<Vector> = [BaselineKind::Sgdm, BaselineKind::SpgdWcr, BaselineKind::Dhn]
            .into_iter()
            .map(|k| run_baseline(&p, &params(k, 0.0), x.clone(), 4, 30, 0, |_| {}).unwrap().x)
            .collect();
        assert_eq!(runs[0], runs[1]);
        assert_eq!(runs[0], runs[2]);
    }

    #[test]
    fn strong_sign_penalty_shrinks_quantization_error() {
        let (p, x) = problem();
        let q = |lam| {
            let mut last = 0.0;
            run_baseline(&p, &params(BaselineKind::Sgdm, lam), x.clone(), 5, 300, 300, |r| last = r.quant_error).unwrap();
            last
        };
        assert!(q(2.0) < q(0.0));
    }

    #[test]
    fn deterministic_and_validated() {
        let (p, x) = problem();
        let a = run_baseline(&p, &params(BaselineKind::Dhn, 0.1), x.clone(), 6, 20, 5, |_| {}).unwrap();
        let b = run_baseline(&p, &params(BaselineKind::Dhn, 0.1), x.clone(), 6, 20, 5, |_| {}).unwrap();
        assert_eq!(a.x, b.x);
        assert!(run_baseline(&p, &params(BaselineKind::SpgdWcr, 2.0), x, 6, 5, 1, |_| {}).is_err());
    }
}
