//! The two-block objective `F(x, B) = f(x) + γ/(2n) Σ ‖D_i(x) − b_i‖²`, the
//! Lagrangian `𝓛 = F + ⟨B, Λ⟩ − h*(Λ)` and the quantities built from them.

mod hashing;
pub mod toy;

pub use hashing::HashingProblem;

use crate::error::{Error, Result};
use crate::numerics::{dist_sq, norm_sq, Matrix, Rng, Vector};
use crate::regularizer::WRegularizer;

/// A finite-sum problem in `(x, B)` whose coupling is the quadratic penalty
/// between the network outputs `D(x)` and the auxiliary codes `B`.
pub trait TwoBlockProblem: Sync {
    /// Number of samples `n`.
    fn n(&self) -> usize;
    /// Code length `d`.
    fn code_len(&self) -> usize;
    fn x_dim(&self) -> usize;
    fn gamma(&self) -> f64;
    fn regularizer(&self) -> &WRegularizer;
    /// `D(x)` for every sample, `n × d`.
    fn outputs(&self, x: &[f64]) -> Result<Matrix>;
    /// `f(x)` given `U = D(x)`.
    fn loss(&self, x: &[f64], u: &Matrix) -> Result<f64>;
    /// `(1/|idx|) Σ_{j ∈ idx} ∇ₓF_j(x, b_j)`, repeated indices counted with
    /// multiplicity.
    fn grad_x_batch(&self, x: &[f64], b: &Matrix, idx: &[usize]) -> Result<Vector>;

    /// Full gradient `∇ₓF(x, B)`.
    fn grad_x(&self, x: &[f64], b: &Matrix) -> Result<Vector> {
        let all: Vec<usize> = (0..self.n()).collect();
        self.grad_x_batch(x, b, &all)
    }

    /// `F(x, B)`.
    fn value(&self, x: &[f64], b: &Matrix) -> Result<f64> {
        let u = self.outputs(x)?;
        Ok(self.loss(x, &u)? + penalty_from_outputs(self.gamma(), &u, b)?)
    }
}

fn check_codes<P: TwoBlockProblem + ?Sized>(p: &P, m: &Matrix, what: &'static str) -> Result<()> {
    if m.rows() != p.n() {
        return Err(Error::DimensionMismatch {
            op: what,
            expected: p.n(),
            got: m.rows(),
        });
    }
    if m.cols() != p.code_len() {
        return Err(Error::DimensionMismatch {
            op: what,
            expected: p.code_len(),
            got: m.cols(),
        });
    }
    Ok(())
}

/// `γ/(2n) ‖U − B‖²_F`.
pub fn penalty_from_outputs(gamma: f64, u: &Matrix, b: &Matrix) -> Result<f64> {
    u.same_shape(b, "penalty")?;
    Ok(gamma / (2.0 * u.rows() as f64) * dist_sq(u.as_slice(), b.as_slice()))
}

/// `(γ/n)(B − U)`.
pub fn grad_b_from_outputs(gamma: f64, u: &Matrix, b: &Matrix) -> Result<Matrix> {
    u.same_shape(b, "grad_B")?;
    let scale = gamma / u.rows() as f64;
    let data = b.as_slice().iter().zip(u.as_slice()).map(|(bv, uv)| scale * (bv - uv)).collect();
    Matrix::from_vec(b.rows(), b.cols(), data)
}

pub fn penalty_value<P: TwoBlockProblem + ?Sized>(p: &P, x: &[f64], b: &Matrix) -> Result<f64> {
    check_codes(p, b, "B")?;
    penalty_from_outputs(p.gamma(), &p.outputs(x)?, b)
}

pub fn grad_b<P: TwoBlockProblem + ?Sized>(p: &P, x: &[f64], b: &Matrix) -> Result<Matrix> {
    check_codes(p, b, "B")?;
    grad_b_from_outputs(p.gamma(), &p.outputs(x)?, b)
}

/// Check `‖Λ‖_∞ ≤ λ`, reporting the first offending entry.
pub fn check_dual_feasible(reg: &WRegularizer, lam: &Matrix) -> Result<()> {
    match lam.as_slice().iter().position(|v| !(v.abs() <= reg.lambda())) {
        Some(index) => Err(Error::DualInfeasible {
            index,
            value: lam.as_slice()[index],
            lambda: reg.lambda(),
        }),
        None => Ok(()),
    }
}

/// `𝓛` given `F(x, B)` already evaluated.
pub fn lagrangian_from_value(reg: &WRegularizer, f_value: f64, b: &Matrix, lam: &Matrix) -> Result<f64> {
    check_dual_feasible(reg, lam)?;
    let conj = reg.conj_value(lam.as_slice()).to_f64();
    Ok(f_value + b.inner(lam)? - conj)
}

/// `𝓛(x, B, Λ) = F(x, B) + ⟨B, Λ⟩ − h*(Λ)`; an infeasible `Λ` is reported
/// as an error instead of the value `−∞`.
pub fn lagrangian_value<P: TwoBlockProblem + ?Sized>(p: &P, x: &[f64], b: &Matrix, lam: &Matrix) -> Result<f64> {
    check_codes(p, b, "B")?;
    check_codes(p, lam, "Lambda")?;
    lagrangian_from_value(p.regularizer(), p.value(x, b)?, b, lam)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct StationarityBreakdown {
    pub dx_sq: f64,
    pub db_sq: f64,
    pub dlam_sq: f64,
    pub total: f64,
}

impl StationarityBreakdown {
    pub fn new(dx_sq: f64, db_sq: f64, dlam_sq: f64) -> Self {
        Self {
            dx_sq,
            db_sq,
            dlam_sq,
            total: dx_sq + db_sq + dlam_sq,
        }
    }
}

/// `Σ dist(B_ij, ∂h*(Λ_ij))²`, using the closest element of each interval.
pub fn dual_residual_sq(reg: &WRegularizer, b: &Matrix, lam: &Matrix) -> Result<f64> {
    b.same_shape(lam, "dual residual")?;
    let mut acc = 0.0;
    for (bv, lv) in b.as_slice().iter().zip(lam.as_slice()) {
        acc += reg.subdiff_conj(*lv)?.dist(*bv).powi(2);
    }
    Ok(acc)
}

/// Stationarity components from an already computed `∇ₓF` and `D(x)`.
pub fn stationarity_from_parts(
    reg: &WRegularizer,
    gamma: f64,
    grad_x: &[f64],
    u: &Matrix,
    b: &Matrix,
    lam: &Matrix,
) -> Result<StationarityBreakdown> {
    check_dual_feasible(reg, lam)?;
    let gb = grad_b_from_outputs(gamma, u, b)?;
    let db_sq = gb.as_slice().iter().zip(lam.as_slice()).map(|(g, l)| (g + l).powi(2)).sum();
    Ok(StationarityBreakdown::new(norm_sq(grad_x), db_sq, dual_residual_sq(reg, b, lam)?))
}

/// `‖∇ₓF‖²`, `‖∇_B F + Λ‖²` and `Σ dist(B_ij, ∂h*(Λ_ij))²`.
pub fn stationarity<P: TwoBlockProblem + ?Sized>(
    p: &P,
    x: &[f64],
    b: &Matrix,
    lam: &Matrix,
) -> Result<StationarityBreakdown> {
    check_codes(p, b, "B")?;
    check_codes(p, lam, "Lambda")?;
    check_dual_feasible(p.regularizer(), lam)?;
    let g = p.grad_x(x, b)?;
    stationarity_from_parts(p.regularizer(), p.gamma(), &g, &p.outputs(x)?, b, lam)
}

/// `𝔼_j ‖∇ₓF_j − ∇ₓF‖²` with the expectation taken over `probe`.
pub fn per_sample_variance<P: TwoBlockProblem + ?Sized>(
    p: &P,
    x: &[f64],
    b: &Matrix,
    full: &[f64],
    probe: &[usize],
) -> Result<f64> {
    if probe.is_empty() {
        return Err(Error::Empty("probe set"));
    }
    let parts = crate::par::map_slice(probe, |&j| p.grad_x_batch(x, b, &[j]).map(|g| dist_sq(&g, full)));
    let mut acc = 0.0;
    for v in parts {
        acc += v?;
    }
    Ok(acc / probe.len() as f64)
}

/// Largest curvature of `F` in the joint variable `(x, B)` at one point,
/// by power iteration on central-difference Hessian-vector products.
pub fn estimate_lipschitz<P: TwoBlockProblem + ?Sized>(
    p: &P,
    x: &[f64],
    b: &Matrix,
    iterations: usize,
    rng: &mut Rng,
) -> Result<f64> {
    let (nx, nb) = (x.len(), b.as_slice().len());
    let joint_grad = |xv: &[f64], bv: &[f64]| -> Result<Vec<f64>> {
        let bm = Matrix::from_vec(b.rows(), b.cols(), bv.to_vec())?;
        let mut g = p.grad_x(xv, &bm)?.into_inner();
        g.extend(grad_b(p, xv, &bm)?.as_slice());
        Ok(g)
    };
    let mut v: Vec<f64> = (0..nx + nb).map(|_| rng.normal()).collect();
    let mut estimate = 0.0;
    for _ in 0..iterations.max(1) {
        let norm = norm_sq(&v).sqrt();
        v.iter_mut().for_each(|e| *e /= norm);
        let eps = 1e-5;
        let shifted = |s: f64| -> (Vec<f64>, Vec<f64>) {
            let xs = x.iter().zip(&v[..nx]).map(|(a, d)| a + s * d).collect();
            let bs = b.as_slice().iter().zip(&v[nx..]).map(|(a, d)| a + s * d).collect();
            (xs, bs)
        };
        let (xp, bp) = shifted(eps);
        let (xm, bm) = shifted(-eps);
        let gp = joint_grad(&xp, &bp)?;
        let gm = joint_grad(&xm, &bm)?;
        let hv: Vec<f64> = gp.iter().zip(&gm).map(|(a, c)| (a - c) / (2.0 * eps)).collect();
        estimate = norm_sq(&hv).sqrt();
        if !(estimate > 0.0) {
            break;
        }
        v = hv;
    }
    Ok(estimate)
}

/// One iterate of a recorded trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub x: Vector,
    pub b: Matrix,
    pub lam: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct DualIncrement {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// `‖Λ^{k+1} − Λ^k‖² ≤ 3τ⁻²‖B^{k+2} − B^{k+1}‖² + 3(τ⁻¹ + L)²‖B^{k+1} − B^k‖²
/// + 3L²‖x^{k+2} − x^{k+1}‖²` for three consecutive iterates.
pub fn dual_increment(window: [&Snapshot; 3], tau: f64, l_f: f64) -> DualIncrement {
    let [s0, s1, s2] = window;
    let lhs = dist_sq(s1.lam.as_slice(), s0.lam.as_slice());
    let rhs = 3.0 / (tau * tau) * dist_sq(s2.b.as_slice(), s1.b.as_slice())
        + 3.0 * (1.0 / tau + l_f).powi(2) * dist_sq(s1.b.as_slice(), s0.b.as_slice())
        + 3.0 * l_f * l_f * dist_sq(&s2.x, &s1.x);
    // Relative slack for rounding when both sides are equal in exact arithmetic.
    let holds = lhs <= rhs * (1.0 + 1e-9) + 1e-300;
    DualIncrement { lhs, rhs, holds }
}

/// The dual-increment bound at every window of a history.
pub fn dual_increment_bound_check(history: &[Snapshot], tau: f64, l_f: f64) -> Result<Vec<DualIncrement>> {
    if history.len() < 3 {
        return Err(Error::InsufficientHistory {
            needed: 3,
            have: history.len(),
        });
    }
    Ok(history
        .windows(3)
        .map(|w| dual_increment([&w[0], &w[1], &w[2]], tau, l_f))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::toy::QuadraticToy;
    use super::*;

    fn toy() -> QuadraticToy {
        QuadraticToy::random(&mut Rng::seed_from(3), 4, 3, 0.7, 3.0, 0.05).unwrap()
    }

    #[test]
    fn penalty_examples() {
        let u = Matrix::from_rows(&[vec![0.2, -0.4]]).unwrap();
        let mut b = u.clone();
        assert_eq!(penalty_from_outputs(3.0, &u, &b).unwrap(), 0.0);
        b[(0, 0)] += 1.0;
        assert!((penalty_from_outputs(3.0, &u, &b).unwrap() - 1.5).abs() < 1e-15);
        assert!((penalty_from_outputs(6.0, &u, &b).unwrap() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn grad_b_vanishes_on_outputs() {
        let p = toy();
        let x = p.sample_x(&mut Rng::seed_from(1));
        let u = p.outputs(&x).unwrap();
        let g = grad_b(&p, &x, &u).unwrap();
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lagrangian_special_cases() {
        let p = toy();
        let mut rng = Rng::seed_from(2);
        let x = p.sample_x(&mut rng);
        let b = p.sample_b(&mut rng);
        let zero = Matrix::zeros(p.n(), p.code_len());
        let f = p.value(&x, &b).unwrap();
        assert_eq!(lagrangian_value(&p, &x, &b, &zero).unwrap(), f);
        let mut lam = zero.clone();
        lam[(0, 0)] = 0.03;
        lam[(1, 2)] = -0.02;
        let l = lagrangian_value(&p, &x, &zero, &lam).unwrap();
        assert!((l - (p.value(&x, &zero).unwrap() - 0.05)).abs() < 1e-14);
        lam[(2, 1)] = 0.06;
        assert!(matches!(
            lagrangian_value(&p, &x, &b, &lam),
            Err(Error::DualInfeasible { index: 7, .. })
        ));
    }

    #[test]
    fn stationarity_zero_dual_and_codes() {
        let p = toy();
        let x = p.sample_x(&mut Rng::seed_from(4));
        let zero = Matrix::zeros(p.n(), p.code_len());
        let s = stationarity(&p, &x, &zero, &zero).unwrap();
        assert_eq!(s.dlam_sq, 0.0);
        assert!(s.total > 0.0);
        assert_eq!(s.total, s.dx_sq + s.db_sq + s.dlam_sq);
    }

    #[test]
    fn dual_increment_constant_history() {
        let p = toy();
        let snap = Snapshot {
            x: p.sample_x(&mut Rng::seed_from(5)),
            b: Matrix::zeros(4, 3),
            lam: Matrix::zeros(4, 3),
        };
        let hist = vec![snap.clone(), snap.clone(), snap];
        let r = dual_increment_bound_check(&hist, 0.01, 1.0).unwrap();
        assert!(r.iter().all(|d| d.holds && d.lhs == 0.0));
        assert!(matches!(
            dual_increment_bound_check(&hist[..2], 0.01, 1.0),
            Err(Error::InsufficientHistory { needed: 3, have: 2 })
        ));
    }

    #[test]
    fn lipschitz_of_quadratic_toy() {
        // The toy Hessian has eigenvalues n·q + γ/n·(1 ± 1) structure; power
        // iteration must land within a few percent of the exact top one.
        let p = toy();
        let x = p.sample_x(&mut Rng::seed_from(6));
        let b = p.sample_b(&mut Rng::seed_from(7));
        let est = estimate_lipschitz(&p, &x, &b, 50, &mut Rng::seed_from(8)).unwrap();
        let exact = p.lipschitz();
        assert!((est - exact).abs() / exact < 1e-3, "{est} vs {exact}");
    }
}
