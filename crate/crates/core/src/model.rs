//! The hashing network `D(x; a) = tanh(C(x; a))`: dense layers with ELU on
//! the hidden layers and `tanh` on the output, exact reverse-mode gradients,
//! and the pairwise likelihood loss on continuous codes.

use std::io::{BufRead, Write};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::data::{Pair, PairSet};
use crate::error::{invalid, Error, Result};
use crate::numerics::{Matrix, Rng, Vector};
use crate::regularizer::sign;

/// Flat parameter vector; its layout is given by [`MlpSpec::layers`].
pub type ParamVector = Vector;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    widths: Vec<usize>,
}

/// Location of one dense layer inside the flat parameter vector. Weights are
/// stored row-major as `fan_out × fan_in`, followed by `fan_out` biases.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerView {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Range<usize>,
    pub bias: Range<usize>,
}

/// Activations recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    /// Input to each layer, starting with the sample itself.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of every layer.
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

#[inline]
pub fn elu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        z.exp_m1()
    }
}

#[inline]
pub fn elu_prime(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        z.exp()
    }
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        if widths.len() < 2 {
            return Err(invalid("layer_widths", "need an input and an output width"));
        }
        if widths.contains(&0) {
            return Err(invalid("layer_widths", "widths must be positive"));
        }
        Ok(Self { widths })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    /// Code length `d`.
    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn param_len(&self) -> usize {
        self.widths.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    pub fn layers(&self) -> Vec<LayerView> {
        let mut offset = 0;
        self.widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let weights = offset..offset + fan_in * fan_out;
                let bias = weights.end..weights.end + fan_out;
                offset = bias.end;
                LayerView {
                    fan_in,
                    fan_out,
                    weights,
                    bias,
                }
            })
            .collect()
    }

    /// Kaiming (fan-in) normal weights, zero biases.
    pub fn init_params(&self, rng: &mut Rng) -> ParamVector {
        let mut x = vec![0.0; self.param_len()];
        for layer in self.layers() {
            let std = (2.0 / layer.fan_in as f64).sqrt();
            for w in &mut x[layer.weights] {
                *w = std * rng.normal();
            }
        }
        Vector::new(x).expect("param_len > 0")
    }

    fn check(&self, x: &[f64], a: &[f64]) -> Result<()> {
        if x.len() != self.param_len() {
            return Err(Error::DimensionMismatch {
                op: "network parameters",
                expected: self.param_len(),
                got: x.len(),
            });
        }
        if a.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                op: "network input",
                expected: self.input_dim(),
                got: a.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_tape(x, a)?.output)
    }

    pub fn forward_tape(&self, x: &[f64], a: &[f64]) -> Result<Tape> {
        self.check(x, a)?;
        let layers = self.layers();
        let last = layers.len() - 1;
        let mut inputs = Vec::with_capacity(layers.len());
        let mut pre = Vec::with_capacity(layers.len());
        let mut act = a.to_vec();
        for (l, layer) in layers.iter().enumerate() {
            let w = &x[layer.weights.clone()];
            let b = &x[layer.bias.clone()];
            let z: Vec<f64> = (0..layer.fan_out)
                .map(|o| {
                    let row = &w[o * layer.fan_in..(o + 1) * layer.fan_in];
                    b[o] + row.iter().zip(&act).map(|(wi, ai)| wi * ai).sum::<f64>()
                })
                .collect();
            let next: Vec<f64> = if l == last {
                z.iter().map(|v| v.tanh()).collect()
            } else {
                z.iter().map(|&v| elu(v)).collect()
            };
            inputs.push(std::mem::replace(&mut act, next));
            pre.push(z);
        }
        Ok(Tape {
            inputs,
            pre,
            output: act,
        })
    }

    /// Accumulate `∇ₓ ⟨cotangent, D(x; a)⟩` into `grad`, reusing the
    /// activations of a forward pass at the same `x`.
    pub fn vjp_into(&self, x: &[f64], tape: &Tape, cotangent: &[f64], grad: &mut [f64]) {
        debug_assert_eq!(cotangent.len(), self.output_dim());
        debug_assert_eq!(grad.len(), self.param_len());
        let layers = self.layers();
        let mut delta: Vec<f64> = cotangent
            .iter()
            .zip(&tape.output)
            .map(|(v, u)| v * (1.0 - u * u))
            .collect();
        for l in (0..layers.len()).rev() {
            let layer = &layers[l];
            let input = &tape.inputs[l];
            {
                let gw = &mut grad[layer.weights.clone()];
                for (o, d) in delta.iter().enumerate() {
                    if *d == 0.0 {
                        continue;
                    }
                    let row = &mut gw[o * layer.fan_in..(o + 1) * layer.fan_in];
                    for (g, a) in row.iter_mut().zip(input) {
                        *g += d * a;
                    }
                }
            }
            for (g, d) in grad[layer.bias.clone()].iter_mut().zip(&delta) {
                *g += d;
            }
            if l > 0 {
                let w = &x[layer.weights.clone()];
                let mut prev = vec![0.0; layer.fan_in];
                for (o, d) in delta.iter().enumerate() {
                    let row = &w[o * layer.fan_in..(o + 1) * layer.fan_in];
                    for (p, wi) in prev.iter_mut().zip(row) {
                        *p += d * wi;
                    }
                }
                for (p, z) in prev.iter_mut().zip(&tape.pre[l - 1]) {
                    *p *= elu_prime(*z);
                }
                delta = prev;
            }
        }
    }

    /// `∇ₓ Σ_s ⟨v_s, D(x; a_s)⟩` for a batch of inputs and cotangents,
    /// summed in batch order.
    pub fn backward(&self, x: &[f64], inputs: &[&[f64]], cotangents: &[&[f64]]) -> Result<Vector> {
        if inputs.len() != cotangents.len() {
            return Err(Error::DimensionMismatch {
                op: "backward batch",
                expected: inputs.len(),
                got: cotangents.len(),
            });
        }
        let mut grad = vec![0.0; self.param_len()];
        for (a, v) in inputs.iter().zip(cotangents) {
            if v.len() != self.output_dim() {
                return Err(Error::DimensionMismatch {
                    op: "cotangent",
                    expected: self.output_dim(),
                    got: v.len(),
                });
            }
            let tape = self.forward_tape(x, a)?;
            self.vjp_into(x, &tape, v, &mut grad);
        }
        Ok(Vector::new(grad).expect("param_len > 0"))
    }

    /// Outputs for every row of `features`.
    pub fn forward_all(&self, x: &[f64], features: &Matrix) -> Result<Matrix> {
        let rows = crate::par::map_range(features.rows(), |i| self.forward(x, features.row(i)));
        let mut out = Matrix::zeros(features.rows(), self.output_dim());
        for (i, r) in rows.into_iter().enumerate() {
            out.row_mut(i).copy_from_slice(&r?);
        }
        Ok(out)
    }
}

/// `log(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Pairwise likelihood loss on continuous codes.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseLossSpec {
    /// Sharpness `α` of `σ(s) = 1 / (1 + exp(-α s))`; distinct from the
    /// momentum coefficient of the solver.
    pub alpha_loss: f64,
    pub pairs: PairSet,
}

impl PairwiseLossSpec {
    pub fn new(alpha_loss: f64, pairs: PairSet) -> Result<Self> {
        if !(alpha_loss > 0.0 && alpha_loss <= 1.0) {
            return Err(invalid("alpha_loss", format!("must lie in (0, 1], got {alpha_loss}")));
        }
        if pairs.is_empty() {
            return Err(Error::Empty("pair set"));
        }
        Ok(Self { alpha_loss, pairs })
    }
}

/// Negative log-likelihood of one pair and its derivative with respect to
/// `s^h = ½⟨u_i, u_j⟩`.
#[inline]
pub fn pair_term(alpha: f64, ui: &[f64], uj: &[f64], similar: bool) -> (f64, f64) {
    let s = 0.5 * ui.iter().zip(uj).map(|(a, b)| a * b).sum::<f64>();
    let target = if similar { 1.0 } else { 0.0 };
    let loss = softplus(alpha * s) - alpha * target * s;
    let dloss_ds = alpha * (sigmoid(alpha * s) - target);
    (loss, dloss_ds)
}

/// `(1/|S|) Σ [log(1 + exp(α s^h)) − α s° s^h]` and its gradient in `U`.
pub fn pairwise_loss(spec: &PairwiseLossSpec, u: &Matrix) -> Result<(f64, Matrix)> {
    let scale = 1.0 / spec.pairs.len() as f64;
    let mut grad = Matrix::zeros(u.rows(), u.cols());
    let mut total = 0.0;
    for &Pair { i, j, similar } in spec.pairs.iter() {
        if i >= u.rows() || j >= u.rows() {
            return Err(Error::DimensionMismatch {
                op: "pair index",
                expected: u.rows(),
                got: i.max(j) + 1,
            });
        }
        let (loss, c) = pair_term(spec.alpha_loss, u.row(i), u.row(j), similar);
        total += loss;
        let half = 0.5 * c * scale;
        for k in 0..u.cols() {
            let (ui, uj) = (u[(i, k)], u[(j, k)]);
            grad[(i, k)] += half * uj;
            grad[(j, k)] += half * ui;
        }
    }
    Ok((total * scale, grad))
}

/// Elementwise sign with `sign(0) = sign(-0) = +1`.
pub fn binarize(u: &[f64]) -> Vec<f64> {
    u.iter().map(|&v| sign(v)).collect()
}

/// Write parameters as text: a `widths,...` header line followed by one
/// value per line in round-trip exponent notation.
pub fn write_params<W: Write>(spec: &MlpSpec, x: &[f64], mut out: W) -> std::io::Result<()> {
    let widths: Vec<String> = spec.widths.iter().map(|w| w.to_string()).collect();
    writeln!(out, "widths,{}", widths.join(","))?;
    for v in x {
        writeln!(out, "{v:e}")?;
    }
    Ok(())
}

pub fn read_params<R: BufRead>(input: R) -> Result<(MlpSpec, ParamVector)> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("missing header".into()))?
        .map_err(|e| Error::Format(e.to_string()))?;
    let mut fields = header.trim().split(',');
    if fields.next() != Some("widths") {
        return Err(Error::Format(format!("bad header `{header}`")));
    }
    let widths = fields
        .map(|f| f.trim().parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Format(e.to_string()))?;
    let spec = MlpSpec::new(widths)?;
    let mut x = Vec::with_capacity(spec.param_len());
    for line in lines {
        let line = line.map_err(|e| Error::Format(e.to_string()))?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        x.push(t.parse::<f64>().map_err(|e| Error::Format(format!("`{t}`: {e}")))?);
    }
    if x.len() != spec.param_len() {
        return Err(Error::Format(format!(
            "expected {} values, found {}",
            spec.param_len(),
            x.len()
        )));
    }
    Ok((spec, Vector::new(x)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_validation() {
        assert!(MlpSpec::new(vec![4]).is_err());
        assert!(MlpSpec::new(vec![4, 0, 2]).is_err());
        let s = MlpSpec::new(vec![16, 32, 8]).unwrap();
        assert_eq!(s.param_len(), 17 * 32 + 33 * 8);
        let layers = s.layers();
        assert_eq!(layers[1].bias.end, s.param_len());
    }

    #[test]
    fn zero_params_give_zero_codes() {
        let s = MlpSpec::new(vec![3, 5, 2]).unwrap();
        let u = s.forward(&vec![0.0; s.param_len()], &[0.3, -1.0, 2.0]).unwrap();
        assert_eq!(u, vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_gives_tanh() {
        let s = MlpSpec::new(vec![3, 3]).unwrap();
        let mut x = vec![0.0; s.param_len()];
        for i in 0..3 {
            x[i * 3 + i] = 1.0;
        }
        let a = [0.01, -0.02, 0.03];
        let u = s.forward(&x, &a).unwrap();
        for (ui, ai) in u.iter().zip(a) {
            assert!((ui - ai.tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_rejects_bad_input() {
        let s = MlpSpec::new(vec![3, 2]).unwrap();
        assert!(s.forward(&vec![0.0; s.param_len()], &[1.0, 2.0]).is_err());
        assert!(s.forward(&[0.0; 3], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn scalar_net_gradient() {
        // f(w) = tanh(w·a) with a single output and no hidden layer.
        let s = MlpSpec::new(vec![2, 1]).unwrap();
        let x = [0.4, -0.3, 0.0];
        let a = [1.5, 0.5];
        let g = s.backward(&x, &[&a], &[&[1.0]]).unwrap();
        let t = (0.4f64 * 1.5 - 0.3 * 0.5).tanh();
        let d = 1.0 - t * t;
        assert!((g[0] - a[0] * d).abs() < 1e-15);
        assert!((g[1] - a[1] * d).abs() < 1e-15);
        assert!((g[2] - d).abs() < 1e-15);
    }

    #[test]
    fn zero_cotangent_gives_zero_gradient() {
        let s = MlpSpec::new(vec![4, 6, 3]).unwrap();
        let x = s.init_params(&mut Rng::seed_from(1));
        let g = s.backward(&x, &[&[0.1, 0.2, 0.3, 0.4]], &[&[0.0, 0.0, 0.0]]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn outputs_are_bounded() {
        let s = MlpSpec::new(vec![4, 8, 3]).unwrap();
        let mut rng = Rng::seed_from(5);
        let x = s.init_params(&mut rng);
        for _ in 0..50 {
            let a: Vec<f64> = (0..4).map(|_| 3.0 * rng.normal()).collect();
            assert!(s.forward(&x, &a).unwrap().iter().all(|u| u.abs() < 1.0));
        }
    }

    #[test]
    fn elu_gradient_is_one_lipschitz() {
        let mut rng = Rng::seed_from(9);
        for _ in 0..10_000 {
            let a = rng.uniform_in(-8.0, 8.0);
            let b = rng.uniform_in(-8.0, 8.0);
            assert!((elu_prime(a) - elu_prime(b)).abs() <= (a - b).abs() + 1e-15);
        }
    }

    #[test]
    fn orthogonal_pair_costs_log_two() {
        let pairs = PairSet::new(vec![Pair { i: 0, j: 1, similar: true }]);
        let spec = PairwiseLossSpec::new(1.0, pairs).unwrap();
        let u = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let (loss, _) = pairwise_loss(&spec, &u).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn pair_loss_saturates() {
        let big = vec![30.0; 4];
        let neg = vec![-30.0; 4];
        let (l, _) = pair_term(1.0, &big, &big, true);
        assert!(l < 1e-100);
        let (l, _) = pair_term(1.0, &big, &neg, false);
        assert!(l < 1e-100);
    }

    #[test]
    fn loss_spec_validation() {
        let pairs = PairSet::new(vec![Pair { i: 0, j: 1, similar: true }]);
        assert!(PairwiseLossSpec::new(0.0, pairs.clone()).is_err());
        assert!(PairwiseLossSpec::new(1.5, pairs).is_err());
        assert!(PairwiseLossSpec::new(0.5, PairSet::new(vec![])).is_err());
    }

    #[test]
    fn binarize_examples() {
        assert_eq!(binarize(&[0.3, -0.7]), vec![1.0, -1.0]);
        assert_eq!(binarize(&[0.0]), vec![1.0]);
        assert_eq!(binarize(&[-0.0]), vec![1.0]);
    }

    #[test]
    fn params_file_round_trip() {
        let s = MlpSpec::new(vec![3, 4, 2]).unwrap();
        let x = s.init_params(&mut Rng::seed_from(77));
        let mut buf = Vec::new();
        write_params(&s, &x, &mut buf).unwrap();
        let (s2, x2) = read_params(buf.as_slice()).unwrap();
        assert_eq!(s, s2);
        assert_eq!(x, x2);
        assert!(read_params("widths,3,2\n1.0\n".as_bytes()).is_err());
        assert!(read_params("shape,3,2\n".as_bytes()).is_err());
    }
}
