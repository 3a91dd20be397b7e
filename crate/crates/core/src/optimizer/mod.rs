//! The DualHash solver loop: an x-step (momentum or recursive momentum),
//! an explicit gradient step in `B` and a proximal step in `Λ` on the
//! conjugate of the regularizer, in that order, every iteration.

pub mod baselines;
pub mod lyapunov;

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::numerics::{dist_sq, norm_sq, sample_indices, Matrix, Rng, Vector};
use crate::problem::{
    dual_increment, grad_b_from_outputs, lagrangian_from_value, penalty_from_outputs, per_sample_variance,
    stationarity_from_parts, DualIncrement, Snapshot, StationarityBreakdown, TwoBlockProblem,
};
use crate::regularizer::{sign, WRegularizer};
use lyapunov::{psi, Deltas, LyapunovConfig, Potential};

/// How many samples enter a stochastic gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Batch {
    /// Every sample exactly once: the deterministic full gradient.
    Full,
    /// `b` indices drawn uniformly with replacement.
    Sampled(usize),
}

impl Batch {
    fn draw(self, rng: &mut Rng, n: usize) -> Result<Vec<usize>> {
        match self {
            Batch::Full => Ok((0..n).collect()),
            Batch::Sampled(b) => sample_indices(rng, n, b.min(n)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StoMParams {
    /// The step `η_k` actually applied.
    pub eta: f64,
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
    pub batch: Batch,
}

impl StoMParams {
    /// `η_k = η / L_F`.
    pub fn from_schedule(eta: f64, l_f: f64, alpha: f64, beta: f64, tau: f64, batch: Batch) -> Result<Self> {
        if !(l_f > 0.0 && l_f.is_finite()) {
            return Err(invalid("lipschitz", format!("must be positive, got {l_f}")));
        }
        let p = Self {
            eta: eta / l_f,
            alpha,
            beta,
            tau,
            batch,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(invalid("eta", format!("must be positive, got {}", self.eta)));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(invalid("alpha", format!("must lie in [0, 1), got {}", self.alpha)));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(invalid("beta", format!("must lie in [0, 1), got {}", self.beta)));
        }
        check_tau(self.tau)?;
        check_batch(self.batch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StoRMParams {
    /// The step `η_k` actually applied.
    pub eta: f64,
    /// The weight `ρ_k` actually applied.
    pub rho: f64,
    pub tau: f64,
    /// Batch of the first iteration.
    pub b1: Batch,
    pub batch: Batch,
}

impl StoRMParams {
    /// `η_k = η/(L̃_F T^{1/3})`, `ρ_k = 8ρη²/T^{2/3}` and `b₁ = ⌈c_b T^{1/3}⌉`.
    pub fn from_schedule(
        eta: f64,
        rho: f64,
        l_tilde: f64,
        tau: f64,
        c_b: f64,
        batch: Batch,
        horizon: usize,
    ) -> Result<Self> {
        if !(l_tilde > 0.0 && l_tilde.is_finite()) {
            return Err(invalid("lipschitz", format!("must be positive, got {l_tilde}")));
        }
        if horizon == 0 {
            return Err(invalid("iterations", "must be at least 1"));
        }
        if !(c_b > 0.0) {
            return Err(invalid("c_b", "must be positive"));
        }
        let t = horizon as f64;
        let p = Self {
            eta: eta / (l_tilde * t.cbrt()),
            rho: 8.0 * rho * eta * eta / t.powf(2.0 / 3.0),
            tau,
            b1: Batch::Sampled((c_b * t.cbrt()).ceil().max(1.0) as usize),
            batch,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(invalid("eta", format!("must be positive, got {}", self.eta)));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(invalid("rho", format!("rho_k = {} must lie in (0, 1]", self.rho)));
        }
        check_tau(self.tau)?;
        check_batch(self.b1)?;
        check_batch(self.batch)
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(invalid("tau", format!("must be positive, got {tau}")));
    }
    Ok(())
}

fn check_batch(b: Batch) -> Result<()> {
    if b == Batch::Sampled(0) {
        return Err(invalid("batch", "must be positive"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Variant {
    StoM(StoMParams),
    StoRM(StoRMParams),
}

impl Variant {
    pub fn tau(&self) -> f64 {
        match self {
            Variant::StoM(p) => p.tau,
            Variant::StoRM(p) => p.tau,
        }
    }

    pub fn potential(&self) -> Potential {
        match self {
            Variant::StoM(_) => Potential::Sgdm,
            Variant::StoRM(_) => Potential::Storm,
        }
    }
}

/// Starting point of the auxiliary codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BInit {
    /// `B¹ = D(x¹)`: zero initial penalty.
    Outputs,
    /// `B¹ = sgn(D(x¹))`: binary codes from the start.
    Signs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub x: Vector,
    pub x_prev: Vector,
    pub b: Matrix,
    pub b_prev: Matrix,
    pub lam: Matrix,
    /// Recursive-momentum direction `D^{k-1}` once the first step is done.
    pub storm_d: Option<Vector>,
    /// Iteration counter `k`, starting at 1.
    pub k: usize,
    pub rng: Rng,
}

impl SolverState {
    /// `x⁰ = x¹`, `B⁰ = B¹`, `Λ¹ = 0`.
    pub fn init<P: TwoBlockProblem + ?Sized>(p: &P, x: Vector, b_init: BInit, rng: Rng) -> Result<Self> {
        if x.len() != p.x_dim() {
            return Err(Error::DimensionMismatch {
                op: "initial x",
                expected: p.x_dim(),
                got: x.len(),
            });
        }
        let mut b = p.outputs(&x)?;
        if b_init == BInit::Signs {
            b.as_mut_slice().iter_mut().for_each(|v| *v = sign(*v));
        }
        Ok(Self {
            x_prev: x.clone(),
            x,
            b_prev: b.clone(),
            lam: Matrix::zeros(b.rows(), b.cols()),
            b,
            storm_d: None,
            k: 1,
            rng,
        })
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            x: self.x.clone(),
            b: self.b.clone(),
            lam: self.lam.clone(),
        }
    }
}

/// Output of an x-step: the new iterate and the direction it used, with
/// the point where the direction estimates `∇ₓF`.
#[derive(Debug, Clone)]
pub struct XStep {
    pub x_next: Vector,
    pub direction: Vector,
    pub eval_point: Vector,
    pub batch: Vec<usize>,
}

/// `z = x + β(x − x_prev)`, `y = x + α(x − x_prev)`,
/// `x⁺ = y − η ∇ₓF(z, B; 𝒥)`.
pub fn step_x_stom<P: TwoBlockProblem + ?Sized>(state: &mut SolverState, p: &P, params: &StoMParams) -> Result<XStep> {
    let batch = params.batch.draw(&mut state.rng, p.n())?;
    let disp: Vec<f64> = state.x.iter().zip(state.x_prev.iter()).map(|(a, b)| a - b).collect();
    let z: Vec<f64> = state.x.iter().zip(&disp).map(|(x, d)| x + params.beta * d).collect();
    let g = p.grad_x_batch(&z, &state.b, &batch)?;
    let x_next = state
        .x
        .iter()
        .zip(&disp)
        .zip(g.iter())
        .map(|((x, d), gv)| x + params.alpha * d - params.eta * gv)
        .collect();
    Ok(XStep {
        x_next: Vector::new(x_next)?,
        direction: g,
        eval_point: Vector::new(z)?,
        batch,
    })
}

/// `D¹ = ∇ₓF(x¹, B¹; 𝒥₁)`, then
/// `D^k = (1 − ρ)(D^{k−1} − ∇ₓF(x^{k−1}, B^{k−1}; 𝒥_k)) + ∇ₓF(x^k, B^k; 𝒥_k)`
/// and `x⁺ = x − η D^k`. Updates `state.storm_d`.
pub fn step_x_storm<P: TwoBlockProblem + ?Sized>(
    state: &mut SolverState,
    p: &P,
    params: &StoRMParams,
) -> Result<XStep> {
    let (d, batch) = match &state.storm_d {
        None => {
            let batch = params.b1.draw(&mut state.rng, p.n())?;
            (p.grad_x_batch(&state.x, &state.b, &batch)?, batch)
        }
        Some(prev) => {
            let batch = params.batch.draw(&mut state.rng, p.n())?;
            let g_new = p.grad_x_batch(&state.x, &state.b, &batch)?;
            let g_old = p.grad_x_batch(&state.x_prev, &state.b_prev, &batch)?;
            let d = prev
                .iter()
                .zip(g_old.iter())
                .zip(g_new.iter())
                .map(|((dp, go), gn)| (1.0 - params.rho) * (dp - go) + gn)
                .collect();
            (Vector::new(d)?, batch)
        }
    };
    let x_next = state.x.iter().zip(d.iter()).map(|(x, dv)| x - params.eta * dv).collect();
    state.storm_d = Some(d.clone());
    Ok(XStep {
        x_next: Vector::new(x_next)?,
        direction: d,
        eval_point: state.x.clone(),
        batch,
    })
}

/// `B⁺ = B − τ(∇_B F(x⁺, B) + Λ)` with `u_next = D(x⁺)`.
pub fn step_b(b: &Matrix, lam: &Matrix, u_next: &Matrix, gamma: f64, tau: f64) -> Result<Matrix> {
    let g = grad_b_from_outputs(gamma, u_next, b)?;
    let data = b
        .as_slice()
        .iter()
        .zip(g.as_slice())
        .zip(lam.as_slice())
        .map(|((bv, gv), lv)| bv - tau * (gv + lv))
        .collect();
    Matrix::from_vec(b.rows(), b.cols(), data)
}

/// `Λ⁺ = prox_{(1/τ)h*}(Λ + τ⁻¹(2B⁺ − B))`, the minimizer of
/// `h*(Λ) − ⟨Λ, 2B⁺ − B⟩ + (τ/2)‖Λ − Λ^k‖²`.
pub fn step_lambda(reg: &WRegularizer, lam: &Matrix, b: &Matrix, b_next: &Matrix, tau: f64) -> Result<Matrix> {
    lam.same_shape(b, "Lambda step")?;
    b.same_shape(b_next, "Lambda step")?;
    let step = 1.0 / tau;
    let data = lam
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .zip(b_next.as_slice())
        .map(|((l, bv), bn)| reg.prox_conj_scalar(l + step * (2.0 * bn - bv), step))
        .collect();
    Matrix::from_vec(b.rows(), b.cols(), data)
}

/// Largest distance of `𝒢 = (2B⁺ − B) + τ(Λ − Λ⁺)` to `∂h*(Λ⁺)` over all
/// entries.
pub fn optimality_violation(
    reg: &WRegularizer,
    lam: &Matrix,
    lam_next: &Matrix,
    b: &Matrix,
    b_next: &Matrix,
    tau: f64,
) -> Result<f64> {
    let mut worst = 0.0f64;
    for i in 0..lam.as_slice().len() {
        let g = 2.0 * b_next.as_slice()[i] - b.as_slice()[i] + tau * (lam.as_slice()[i] - lam_next.as_slice()[i]);
        worst = worst.max(reg.subdiff_conj(lam_next.as_slice()[i])?.dist(g));
    }
    Ok(worst)
}

/// What to measure during a run, beyond the Lagrangian and the dual checks
/// that are always tracked.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    /// Emit a record every `log_every` iterations (and at the last one).
    pub log_every: usize,
    /// Full stationarity breakdown on every emitted record.
    pub stationarity: bool,
    /// Quantization error and σ̂² on every `heavy_every`-th emitted record.
    pub heavy_every: usize,
    /// Sample count of the σ̂² probe.
    pub variance_probe: usize,
    /// `‖e^k‖²` of the direction against the full gradient at every
    /// iteration, together with the error of an independent plain
    /// mini-batch gradient at the same point.
    pub estimator_error: bool,
    pub lyapunov: Option<LyapunovConfig>,
    /// `L_F` used for the dual-increment check.
    pub dual_increment: Option<f64>,
}

impl Default for Diagnostics {
    fn default() -> Self {
        Self {
            log_every: 1,
            stationarity: true,
            heavy_every: 10,
            variance_probe: 64,
            estimator_error: false,
            lyapunov: None,
            dual_increment: None,
        }
    }
}

impl Diagnostics {
    /// Only what the loop tracks anyway.
    pub fn minimal() -> Self {
        Self {
            log_every: 1,
            stationarity: false,
            heavy_every: 0,
            variance_probe: 0,
            estimator_error: false,
            lyapunov: None,
            dual_increment: None,
        }
    }
}

/// One row of the per-iteration diagnostics. Quantities describe the state
/// reached by iteration `iteration`, except `lyapunov`, which is `Ψ` at the
/// state the iteration started from (it needs one step of look-ahead).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsRecord {
    pub iteration: usize,
    pub lagrangian: f64,
    pub lyapunov: Option<f64>,
    pub stationarity: Option<StationarityBreakdown>,
    pub quant_error: Option<f64>,
    pub sigma_sq: Option<f64>,
    pub lam_max_abs: f64,
    pub identity_violation: f64,
    pub estimator_error_sq: Option<f64>,
    pub plain_error_sq: Option<f64>,
    pub dual_increment: Option<DualIncrement>,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub iterations: usize,
    pub b_init: BInit,
    pub diagnostics: Diagnostics,
    /// Abort once `|𝓛|` exceeds this multiple of its initial magnitude.
    pub divergence_factor: f64,
}

impl RunOptions {
    pub fn new(iterations: usize) -> Self {
        Self {
            iterations,
            b_init: BInit::Outputs,
            diagnostics: Diagnostics::default(),
            divergence_factor: 1e6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub state: SolverState,
    /// The returned index `R`, uniform on `{2, …, T+1}`.
    pub sampled_r: usize,
    pub x_r: Vector,
    pub initial_lagrangian: f64,
    pub final_lagrangian: f64,
    pub max_lam_abs: f64,
    pub max_identity_violation: f64,
    pub iterations: usize,
}

const STREAM_BATCHES: u64 = 1;
const STREAM_RETURN: u64 = 2;
const STREAM_PROBE: u64 = 3;
const STREAM_PLAIN: u64 = 4;

/// Run `T` iterations from `x¹`. The trajectory depends only on the problem,
/// the variant, `x¹`, `b_init` and `seed`; diagnostics draw from their own
/// random streams and never perturb it.
pub fn run<P, F>(p: &P, variant: &Variant, x1: Vector, seed: u64, opts: &RunOptions, mut sink: F) -> Result<RunSummary>
where
    P: TwoBlockProblem + ?Sized,
    F: FnMut(&DiagnosticsRecord),
{
    if opts.iterations == 0 {
        return Err(invalid("iterations", "must be at least 1"));
    }
    match variant {
        Variant::StoM(s) => s.validate()?,
        Variant::StoRM(s) => s.validate()?,
    }
    let root = Rng::seed_from(seed);
    let mut state = SolverState::init(p, x1, opts.b_init, root.split(STREAM_BATCHES))?;
    let sampled_r = 2 + root.split(STREAM_RETURN).index(opts.iterations);
    let mut probe_rng = root.split(STREAM_PROBE);
    let mut plain_rng = root.split(STREAM_PLAIN);
    let diag = &opts.diagnostics;
    let tau = variant.tau();
    let reg = *p.regularizer();
    let gamma = p.gamma();
    let probe: Vec<usize> = if diag.variance_probe > 0 {
        sample_indices(&mut probe_rng, p.n(), diag.variance_probe.min(p.n()))?
    } else {
        Vec::new()
    };

    let u1 = p.outputs(&state.x)?;
    let mut lag = lagrangian_from_value(
        &reg,
        p.loss(&state.x, &u1)? + penalty_from_outputs(gamma, &u1, &state.b)?,
        &state.b,
        &state.lam,
    )?;
    let initial = lag;
    let limit = opts.divergence_factor * initial.abs().max(1e-12);
    let mut prev_snapshot: Option<Snapshot> = None;
    let mut x_r = state.x.clone();
    let mut max_lam = 0.0f64;
    let mut max_violation = 0.0f64;
    let mut logged = 0usize;

    for k in 1..=opts.iterations {
        let step = match variant {
            Variant::StoM(s) => step_x_stom(&mut state, p, s)?,
            Variant::StoRM(s) => step_x_storm(&mut state, p, s)?,
        };
        let (estimator_error_sq, plain_error_sq) = if diag.estimator_error {
            let full = p.grad_x(&step.eval_point, &state.b)?;
            let plain_batch = match variant {
                Variant::StoM(s) => s.batch,
                Variant::StoRM(s) => s.batch,
            }
            .draw(&mut plain_rng, p.n())?;
            let plain = p.grad_x_batch(&step.eval_point, &state.b, &plain_batch)?;
            (Some(dist_sq(&step.direction, &full)), Some(dist_sq(&plain, &full)))
        } else {
            (None, None)
        };

        let u_next = p.outputs(&step.x_next)?;
        let b_next = step_b(&state.b, &state.lam, &u_next, gamma, tau)?;
        let lam_next = step_lambda(&reg, &state.lam, &state.b, &b_next, tau)?;
        let violation = optimality_violation(&reg, &state.lam, &lam_next, &state.b, &b_next, tau)?;
        let lam_abs = lam_next.max_abs();
        max_lam = max_lam.max(lam_abs);
        max_violation = max_violation.max(violation);

        let f_next = p.loss(&step.x_next, &u_next)? + penalty_from_outputs(gamma, &u_next, &b_next)?;
        let lag_next = lagrangian_from_value(&reg, f_next, &b_next, &lam_next)?;
        if !lag_next.is_finite() || !step.x_next.is_finite() || !b_next.is_finite() {
            return Err(Error::Diverged {
                iteration: k,
                reason: "non-finite iterate or Lagrangian".into(),
            });
        }
        if lag_next.abs() > limit {
            return Err(Error::Diverged {
                iteration: k,
                reason: format!("Lagrangian {lag_next:e} exceeds {:e} times its initial magnitude", opts.divergence_factor),
            });
        }

        let lyap = diag.lyapunov.as_ref().map(|cfg| {
            let d = Deltas::between([&state.x_prev, &state.x, &step.x_next], [&state.b_prev, &state.b, &b_next]);
            psi(cfg, lag, &d, variant.potential())
        });
        let current = state.snapshot();
        let next = Snapshot {
            x: step.x_next.clone(),
            b: b_next.clone(),
            lam: lam_next.clone(),
        };
        let dual_inc = match (diag.dual_increment, &prev_snapshot) {
            (Some(l_f), Some(prev)) => Some(dual_increment([prev, &current, &next], tau, l_f)),
            _ => None,
        };

        state.x_prev = std::mem::replace(&mut state.x, step.x_next);
        state.b_prev = std::mem::replace(&mut state.b, b_next);
        state.lam = lam_next;
        state.k = k + 1;
        lag = lag_next;
        if diag.dual_increment.is_some() {
            prev_snapshot = Some(current);
        }
        if state.k == sampled_r {
            x_r = state.x.clone();
        }

        let log_now = diag.log_every > 0 && (k % diag.log_every == 0 || k == opts.iterations);
        if log_now {
            let heavy = diag.heavy_every > 0 && logged.is_multiple_of(diag.heavy_every);
            let need_grad = diag.stationarity || (heavy && !probe.is_empty());
            let full = if need_grad { Some(p.grad_x(&state.x, &state.b)?) } else { None };
            let stationarity = match (&full, diag.stationarity) {
                (Some(g), true) => Some(stationarity_from_parts(&reg, gamma, g, &u_next, &state.b, &state.lam)?),
                _ => None,
            };
            let (quant_error, sigma_sq) = if heavy {
                let sigma = match &full {
                    Some(g) if !probe.is_empty() => Some(per_sample_variance(p, &state.x, &state.b, g, &probe)?),
                    _ => None,
                };
                (Some(crate::metrics::quantization_error(&u_next)), sigma)
            } else {
                (None, None)
            };
            sink(&DiagnosticsRecord {
                iteration: k,
                lagrangian: lag,
                lyapunov: lyap,
                stationarity,
                quant_error,
                sigma_sq,
                lam_max_abs: lam_abs,
                identity_violation: violation,
                estimator_error_sq,
                plain_error_sq,
                dual_increment: dual_inc,
            });
            logged += 1;
        }
    }

    Ok(RunSummary {
        state,
        sampled_r,
        x_r,
        initial_lagrangian: initial,
        final_lagrangian: lag,
        max_lam_abs: max_lam,
        max_identity_violation: max_violation,
        iterations: opts.iterations,
    })
}

/// `‖x‖²`-style helper for tests and callers that track step lengths.
pub fn step_length_sq(a: &[f64], b: &[f64]) -> f64 {
    norm_sq(&a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::toy::QuadraticToy;
    use crate::problem::{grad_b, stationarity};

    fn toy() -> QuadraticToy {
        QuadraticToy::random(&mut Rng::seed_from(1), 5, 3, 0.8, 3.0, 0.05).unwrap()
    }

    fn state(p: &QuadraticToy, seed: u64) -> SolverState {
        let mut rng = Rng::seed_from(seed);
        let x = p.sample_x(&mut rng);
        let mut s = SolverState::init(p, x, BInit::Outputs, rng.split(9)).unwrap();
        s.x_prev = p.sample_x(&mut rng);
        s.b = p.sample_b(&mut rng);
        s
    }

    #[test]
    fn stom_without_momentum_is_sgd() {
        let p = toy();
        let mut s = state(&p, 2);
        let params = StoMParams {
            eta: 0.01,
            alpha: 0.0,
            beta: 0.0,
            tau: 0.01,
            batch: Batch::Full,
        };
        let x = s.x.clone();
        let step = step_x_stom(&mut s, &p, &params).unwrap();
        let g = p.grad_x(&x, &s.b).unwrap();
        for i in 0..x.len() {
            assert_eq!(step.x_next[i], x[i] - 0.01 * g[i]);
        }
    }

    #[test]
    fn stom_heavy_ball_form() {
        let p = toy();
        let mut s = state(&p, 3);
        let params = StoMParams {
            eta: 0.01,
            alpha: 0.5,
            beta: 0.0,
            tau: 0.01,
            batch: Batch::Full,
        };
        let (x, xp) = (s.x.clone(), s.x_prev.clone());
        let step = step_x_stom(&mut s, &p, &params).unwrap();
        let g = p.grad_x(&x, &s.b).unwrap();
        for i in 0..x.len() {
            let expect = x[i] - 0.01 * g[i] + 0.5 * (x[i] - xp[i]);
            assert!((step.x_next[i] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn stom_zero_displacement_ignores_momentum() {
        let p = toy();
        let mut s = state(&p, 4);
        s.x_prev = s.x.clone();
        let mk = |a, b| StoMParams {
            eta: 0.02,
            alpha: a,
            beta: b,
            tau: 0.01,
            batch: Batch::Full,
        };
        let a = step_x_stom(&mut s.clone(), &p, &mk(0.0, 0.0)).unwrap();
        let b = step_x_stom(&mut s, &p, &mk(0.9, 0.7)).unwrap();
        assert_eq!(a.x_next, b.x_next);
    }

    #[test]
    fn storm_first_step_and_rho_one() {
        let p = toy();
        let mut s = state(&p, 5);
        let params = StoRMParams {
            eta: 0.01,
            rho: 1.0,
            tau: 0.01,
            b1: Batch::Full,
            batch: Batch::Sampled(2),
        };
        let first = step_x_storm(&mut s, &p, &params).unwrap();
        assert_eq!(first.direction, p.grad_x(&s.x, &s.b).unwrap());
        s.x_prev = s.x.clone();
        s.x = first.x_next;
        let second = step_x_storm(&mut s, &p, &params).unwrap();
        let plain = p.grad_x_batch(&s.x, &s.b, &second.batch).unwrap();
        assert_eq!(second.direction, plain);
    }

    #[test]
    fn b_step_fixed_points() {
        let p = toy();
        let s = state(&p, 6);
        let u = p.outputs(&s.x).unwrap();
        let zero = Matrix::zeros(5, 3);
        assert_eq!(step_b(&u, &zero, &u, 3.0, 0.01).unwrap(), u);
        let lam = grad_b(&p, &s.x, &s.b).unwrap();
        let neg = Matrix::from_vec(5, 3, lam.as_slice().iter().map(|v| -v).collect()).unwrap();
        let b = step_b(&s.b, &neg, &u, 3.0, 0.01).unwrap();
        assert!(dist_sq(b.as_slice(), s.b.as_slice()) < 1e-30);
    }

    #[test]
    fn lambda_step_fixed_point_and_range() {
        let reg = WRegularizer::new(0.05).unwrap();
        let z = Matrix::zeros(2, 2);
        assert_eq!(step_lambda(&reg, &z, &z, &z, 0.01).unwrap(), z);
        let mut rng = Rng::seed_from(7);
        for _ in 0..200 {
            let mk = |rng: &mut Rng, s: f64| Matrix::from_vec(2, 2, (0..4).map(|_| rng.uniform_in(-s, s)).collect()).unwrap();
            let lam = mk(&mut rng, 0.05);
            let b = mk(&mut rng, 1.5);
            let bn = mk(&mut rng, 1.5);
            let tau = rng.uniform_in(1e-3, 1.0);
            let next = step_lambda(&reg, &lam, &b, &bn, tau).unwrap();
            assert!(next.max_abs() <= 0.05);
            assert!(optimality_violation(&reg, &lam, &next, &b, &bn, tau).unwrap() < 1e-10);
        }
    }

    fn convex_run(seed: u64, t: usize) -> (RunSummary, Vec<DiagnosticsRecord>) {
        let p = toy();
        let x1 = p.sample_x(&mut Rng::seed_from(10));
        let l = p.lipschitz();
        let v = Variant::StoM(StoMParams {
            eta: 0.5 / l,
            alpha: 0.0,
            beta: 0.0,
            tau: 0.2 / l,
            batch: Batch::Full,
        });
        let mut recs = Vec::new();
        let s = run(&p, &v, x1, seed, &RunOptions::new(t), |r| recs.push(r.clone())).unwrap();
        (s, recs)
    }

    #[test]
    fn single_iteration_returns_second_iterate() {
        let (s, recs) = convex_run(1, 1);
        assert_eq!(recs.len(), 1);
        assert_eq!(s.sampled_r, 2);
        assert_eq!(s.x_r, s.state.x);
    }

    #[test]
    fn convex_full_batch_converges() {
        let (s, recs) = convex_run(1, 3000);
        let totals: Vec<f64> = recs.iter().map(|r| r.stationarity.unwrap().total).collect();
        assert!(totals.last().unwrap() < &1e-12, "{}", totals.last().unwrap());
        assert!(totals[50..].windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9) + 1e-20));
        assert!(s.max_lam_abs <= 0.05);
        assert!(s.max_identity_violation < 1e-10);
        let p = toy();
        let st = stationarity(&p, &s.state.x, &s.state.b, &s.state.lam).unwrap();
        assert!((st.total - totals.last().unwrap()).abs() < 1e-14);
    }

    #[test]
    fn runs_replay() {
        let (a, ra) = convex_run(3, 50);
        let (b, rb) = convex_run(3, 50);
        assert_eq!(a.state, b.state);
        assert_eq!(ra, rb);
    }

    #[test]
    fn schedules() {
        let s = StoMParams::from_schedule(0.5, 10.0, 0.3, 0.3, 0.01, Batch::Sampled(8)).unwrap();
        assert!((s.eta - 0.05).abs() < 1e-15);
        let r = StoRMParams::from_schedule(0.5, 1.0, 10.0, 0.01, 2.0, Batch::Sampled(8), 1000).unwrap();
        assert!((r.eta - 0.005).abs() < 1e-15);
        assert!((r.rho - 0.02).abs() < 1e-15);
        assert_eq!(r.b1, Batch::Sampled(20));
        assert!(StoRMParams::from_schedule(0.5, 100.0, 10.0, 0.01, 2.0, Batch::Sampled(8), 1000).is_err());
    }
}
