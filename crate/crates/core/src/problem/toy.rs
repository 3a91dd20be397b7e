//! A quadratic two-block problem with an identity "network", `D(x) = x`
//! reshaped to `n × d`, and `f(x) = ⟨c, x⟩ + (q/2)‖x − a‖²`. Everything about
//! it is known in closed form, which makes it the reference for the
//! KKT-construction and convergence checks.

use super::TwoBlockProblem;
use crate::error::{invalid, Result};
use crate::numerics::{Matrix, Rng, Vector};
use crate::regularizer::WRegularizer;

#[derive(Debug, Clone)]
pub struct QuadraticToy {
    n: usize,
    d: usize,
    c: Vec<f64>,
    a: Vec<f64>,
    q: f64,
    gamma: f64,
    reg: WRegularizer,
}

impl QuadraticToy {
    pub fn new(n: usize, d: usize, c: Vec<f64>, a: Vec<f64>, q: f64, gamma: f64, lambda: f64) -> Result<Self> {
        if n < 2 || d == 0 {
            return Err(invalid("n", "need at least two samples and one bit"));
        }
        if c.len() != n * d || a.len() != n * d {
            return Err(invalid("c", "linear and center terms must have n·d entries"));
        }
        if !(q >= 0.0) || !(gamma > 0.0) {
            return Err(invalid("gamma", "need q >= 0 and gamma > 0"));
        }
        Ok(Self {
            n,
            d,
            c,
            a,
            q,
            gamma,
            reg: WRegularizer::new(lambda)?,
        })
    }

    /// Random linear term and centers in `(-0.5, 0.5)`.
    pub fn random(rng: &mut Rng, n: usize, d: usize, q: f64, gamma: f64, lambda: f64) -> Result<Self> {
        let c = (0..n * d).map(|_| rng.uniform_in(-0.5, 0.5)).collect();
        let a = (0..n * d).map(|_| rng.uniform_in(-0.5, 0.5)).collect();
        Self::new(n, d, c, a, q, gamma, lambda)
    }

    /// A linear toy together with an exact critical triple `(x*, B*, Λ*)`:
    /// `B*` is a random sign matrix, `Λ* = v·B*` with `0 < v < λ`,
    /// `x* = B* + (n/γ)Λ*` and `c = −Λ*`.
    pub fn with_critical_point(
        rng: &mut Rng,
        n: usize,
        d: usize,
        gamma: f64,
        lambda: f64,
        v: f64,
    ) -> Result<(Self, Vector, Matrix, Matrix)> {
        if !(v > 0.0 && v < lambda) {
            return Err(invalid("v", "must lie strictly inside (0, lambda)"));
        }
        let b: Vec<f64> = (0..n * d).map(|_| if rng.uniform() < 0.5 { -1.0 } else { 1.0 }).collect();
        let lam: Vec<f64> = b.iter().map(|s| v * s).collect();
        let x: Vec<f64> = b.iter().zip(&lam).map(|(s, l)| s + n as f64 / gamma * l).collect();
        let c: Vec<f64> = lam.iter().map(|l| -l).collect();
        let toy = Self::new(n, d, c, vec![0.0; n * d], 0.0, gamma, lambda)?;
        Ok((
            toy,
            Vector::new(x)?,
            Matrix::from_vec(n, d, b)?,
            Matrix::from_vec(n, d, lam)?,
        ))
    }

    /// Exact top eigenvalue of the joint Hessian in `(x, B)`.
    pub fn lipschitz(&self) -> f64 {
        let g = self.gamma / self.n as f64;
        let q = self.q;
        0.5 * (q + 2.0 * g + (q * q + 4.0 * g * g).sqrt())
    }

    pub fn sample_x(&self, rng: &mut Rng) -> Vector {
        Vector::new((0..self.n * self.d).map(|_| rng.uniform_in(-0.9, 0.9)).collect()).unwrap()
    }

    pub fn sample_b(&self, rng: &mut Rng) -> Matrix {
        let data = (0..self.n * self.d).map(|_| rng.uniform_in(-1.2, 1.2)).collect();
        Matrix::from_vec(self.n, self.d, data).unwrap()
    }
}

impl TwoBlockProblem for QuadraticToy {
    fn n(&self) -> usize {
        self.n
    }

    fn code_len(&self) -> usize {
        self.d
    }

    fn x_dim(&self) -> usize {
        self.n * self.d
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn regularizer(&self) -> &WRegularizer {
        &self.reg
    }

    fn outputs(&self, x: &[f64]) -> Result<Matrix> {
        Matrix::from_vec(self.n, self.d, x.to_vec())
    }

    fn loss(&self, x: &[f64], _u: &Matrix) -> Result<f64> {
        let lin: f64 = self.c.iter().zip(x).map(|(c, v)| c * v).sum();
        let quad: f64 = self.a.iter().zip(x).map(|(a, v)| (v - a).powi(2)).sum();
        Ok(lin + 0.5 * self.q * quad)
    }

    fn grad_x_batch(&self, x: &[f64], b: &Matrix, idx: &[usize]) -> Result<Vector> {
        if idx.is_empty() {
            return Err(crate::error::Error::Empty("mini-batch"));
        }
        let (n, d) = (self.n as f64, self.d);
        let scale = 1.0 / idx.len() as f64;
        let mut g = vec![0.0; self.n * d];
        for &j in idx {
            for k in j * d..(j + 1) * d {
                let fj = n * (self.c[k] + self.q * (x[k] - self.a[k]));
                g[k] += scale * (fj + self.gamma * (x[k] - b.as_slice()[k]));
            }
        }
        Vector::new(g)
    }
}
