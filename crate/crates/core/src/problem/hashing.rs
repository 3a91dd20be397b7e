//! The deep-hashing instance of the two-block problem.
//!
//! Pair losses are split evenly between the two endpoints, so sample `j`
//! owns `F_j = (n/|𝒮|)·½ Σ_{pairs ∋ j} ℓ + (γ/2)‖u_j − b_j‖²` and the mean of
//! the `F_j` is exactly `F`. A mini-batch gradient therefore touches the
//! batch samples and their pair partners: cotangents on the touched outputs
//! are accumulated in batch order, then pushed through the network in fixed
//! chunks whose partial gradients are summed in order.

use super::TwoBlockProblem;
use crate::data::PairSet;
use crate::error::{invalid, Error, Result};
use crate::model::{pair_term, MlpSpec, PairwiseLossSpec, Tape};
use crate::numerics::{Matrix, Vector};
use crate::par;
use crate::regularizer::WRegularizer;

const VJP_CHUNK: usize = 16;

#[derive(Debug, Clone)]
pub struct HashingProblem {
    features: Matrix,
    labels: Vec<u64>,
    spec: MlpSpec,
    loss: PairwiseLossSpec,
    incidence: Vec<Vec<usize>>,
    gamma: f64,
    reg: WRegularizer,
}

impl HashingProblem {
    pub fn new(
        features: Matrix,
        labels: Vec<u64>,
        spec: MlpSpec,
        alpha_loss: f64,
        pairs: PairSet,
        gamma: f64,
        lambda: f64,
    ) -> Result<Self> {
        let n = features.rows();
        if n < 2 {
            return Err(invalid("n", "need at least two training samples"));
        }
        if labels.len() != n {
            return Err(Error::DimensionMismatch {
                op: "labels",
                expected: n,
                got: labels.len(),
            });
        }
        if features.cols() != spec.input_dim() {
            return Err(Error::DimensionMismatch {
                op: "feature width",
                expected: spec.input_dim(),
                got: features.cols(),
            });
        }
        if pairs.span() > n || pairs.iter().any(|p| p.i == p.j) {
            return Err(invalid("pairs", "pair indices must be distinct training samples"));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(invalid("gamma", format!("must be positive, got {gamma}")));
        }
        let incidence = pairs.incidence(n);
        Ok(Self {
            features,
            labels,
            spec,
            loss: PairwiseLossSpec::new(alpha_loss, pairs)?,
            incidence,
            gamma,
            reg: WRegularizer::new(lambda)?,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[u64] {
        &self.labels
    }

    pub fn pairs(&self) -> &PairSet {
        &self.loss.pairs
    }

    pub fn alpha_loss(&self) -> f64 {
        self.loss.alpha_loss
    }

    /// `f(x)` from outputs: the mean pair loss.
    pub fn pair_loss(&self, u: &Matrix) -> f64 {
        let a = self.loss.alpha_loss;
        self.loss.pairs.iter().map(|p| pair_term(a, u.row(p.i), u.row(p.j), p.similar).0).sum::<f64>()
            / self.loss.pairs.len() as f64
    }

    /// `(1/|idx|) Σ_{j ∈ idx} ∇ₓ[f_j(x) + r_j(D_j(x))]`, where `f_j` is the
    /// pair-loss share of sample `j` and `extra(j, u_j, out)` writes
    /// `∇_u r_j(u_j)` into the zeroed buffer `out`.
    pub fn grad_batch_with<E>(&self, x: &[f64], idx: &[usize], extra: E) -> Result<Vector>
    where
        E: Fn(usize, &[f64], &mut [f64]),
    {
        if idx.is_empty() {
            return Err(Error::Empty("mini-batch"));
        }
        let n = self.features.rows();
        if let Some(&j) = idx.iter().find(|&&j| j >= n) {
            return Err(Error::DimensionMismatch {
                op: "batch index",
                expected: n,
                got: j + 1,
            });
        }
        let pairs = self.loss.pairs.as_slice();
        let mut slot = vec![usize::MAX; n];
        let mut touched = Vec::new();
        let mut touch = |s: usize, touched: &mut Vec<usize>| {
            if slot[s] == usize::MAX {
                slot[s] = touched.len();
                touched.push(s);
            }
        };
        for &j in idx {
            touch(j, &mut touched);
            for &k in &self.incidence[j] {
                touch(pairs[k].i, &mut touched);
                touch(pairs[k].j, &mut touched);
            }
        }

        let tapes: Vec<Result<Tape>> = par::map_slice(&touched, |&s| self.spec.forward_tape(x, self.features.row(s)));
        let tapes: Vec<Tape> = tapes.into_iter().collect::<Result<_>>()?;

        let d = self.spec.output_dim();
        let scale = 1.0 / idx.len() as f64;
        let pair_weight = 0.5 * n as f64 / pairs.len() as f64;
        let alpha = self.loss.alpha_loss;
        let mut cot = vec![0.0; touched.len() * d];
        let mut buf = vec![0.0; d];
        for &j in idx {
            for &k in &self.incidence[j] {
                let p = pairs[k];
                let (si, sj) = (slot[p.i], slot[p.j]);
                let (ui, uj) = (tapes[si].output(), tapes[sj].output());
                let (_, c) = pair_term(alpha, ui, uj, p.similar);
                let coef = scale * pair_weight * 0.5 * c;
                for t in 0..d {
                    cot[si * d + t] += coef * uj[t];
                    cot[sj * d + t] += coef * ui[t];
                }
            }
            buf.iter_mut().for_each(|v| *v = 0.0);
            extra(j, tapes[slot[j]].output(), &mut buf);
            for t in 0..d {
                cot[slot[j] * d + t] += scale * buf[t];
            }
        }

        let m = self.spec.param_len();
        let chunks: Vec<usize> = (0..touched.len().div_ceil(VJP_CHUNK)).collect();
        let partial = par::map_slice(&chunks, |&c| {
            let mut g = vec![0.0; m];
            let end = ((c + 1) * VJP_CHUNK).min(touched.len());
            for s in c * VJP_CHUNK..end {
                let v = &cot[s * d..(s + 1) * d];
                if v.iter().any(|&e| e != 0.0) {
                    self.spec.vjp_into(x, &tapes[s], v, &mut g);
                }
            }
            g
        });
        Vector::new(par::ordered_sum(&partial, m))
    }
}

impl TwoBlockProblem for HashingProblem {
    fn n(&self) -> usize {
        self.features.rows()
    }

    fn code_len(&self) -> usize {
        self.spec.output_dim()
    }

    fn x_dim(&self) -> usize {
        self.spec.param_len()
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn regularizer(&self) -> &WRegularizer {
        &self.reg
    }

    fn outputs(&self, x: &[f64]) -> Result<Matrix> {
        self.spec.forward_all(x, &self.features)
    }

    fn loss(&self, _x: &[f64], u: &Matrix) -> Result<f64> {
        Ok(self.pair_loss(u))
    }

    fn grad_x_batch(&self, x: &[f64], b: &Matrix, idx: &[usize]) -> Result<Vector> {
        if b.shape() != (self.n(), self.code_len()) {
            return Err(Error::DimensionMismatch {
                op: "B",
                expected: self.n() * self.code_len(),
                got: b.as_slice().len(),
            });
        }
        let gamma = self.gamma;
        self.grad_batch_with(x, idx, |j, u, out| {
            for ((o, uv), bv) in out.iter_mut().zip(u).zip(b.row(j)) {
                *o = gamma * (uv - bv);
            }
        })
    }
}
