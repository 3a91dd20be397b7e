//! Self-check suites behind `dualhash verify`: closed-form maps against
//! brute force, gradients against finite differences, the constructed
//! critical point, the Lyapunov constants and the retrieval metrics.

use serde::Serialize;

use crate::data::{build_pairs, gen_gaussian_clusters, similar, ClusterSpec, PairMode, Split};
use crate::metrics::{average_precision, hamming_histograms, mean_ap, CodeMatrix, Labeled};
use crate::model::{pairwise_loss, MlpSpec, PairwiseLossSpec};
use crate::numerics::{norm_sq, Matrix, Rng};
use crate::optimizer::lyapunov::{tau_l_limit, LyapunovConfig};
use crate::optimizer::{optimality_violation, step_lambda};
use crate::problem::toy::QuadraticToy;
use crate::problem::{grad_b, penalty_value, stationarity, HashingProblem, TwoBlockProblem};
use crate::regularizer::oracle::{prox_oracle, DEFAULT_RESOLUTION};
use crate::regularizer::WRegularizer;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub checks: usize,
    pub failures: usize,
    /// Largest observed error (or smallest margin) of the suite.
    pub worst: f64,
    pub detail: String,
}

impl SuiteResult {
    fn from_errors(name: &'static str, errors: &[f64], tol: f64, detail: impl Into<String>) -> Self {
        let failures = errors.iter().filter(|e| !(**e <= tol)).count();
        let worst = errors.iter().copied().fold(0.0, f64::max);
        Self {
            name,
            passed: failures == 0 && !errors.is_empty(),
            checks: errors.len(),
            failures,
            worst,
            detail: detail.into(),
        }
    }

    fn failed(name: &'static str, detail: impl Into<String>) -> Self {
        Self {
            name,
            passed: false,
            checks: 0,
            failures: 1,
            worst: f64::INFINITY,
            detail: detail.into(),
        }
    }
}

/// Scalar prox signature `(y, τ, λ) -> v`.
pub type ProxFn<'a> = &'a dyn Fn(f64, f64, f64) -> f64;

pub fn prox_conj_impl(y: f64, tau: f64, lambda: f64) -> f64 {
    WRegularizer::new(lambda).map(|r| r.prox_conj_scalar(y, tau)).unwrap_or(f64::NAN)
}

pub fn prox_h_impl(y: f64, tau: f64, lambda: f64) -> f64 {
    WRegularizer::new(lambda).map(|r| r.prox_h_scalar(y, tau)).unwrap_or(f64::NAN)
}

/// `(y, τ, λ)` with `τ, λ ∈ [1e-3, 1]` and `y ∈ [-2.5, 2.5]`.
pub fn random_triples(seed: u64, count: usize) -> Vec<(f64, f64, f64)> {
    let mut rng = Rng::seed_from(seed);
    (0..count)
        .map(|_| {
            let y = rng.uniform_in(-2.5, 2.5);
            let tau = rng.uniform_in(1e-3, 1.0);
            let lambda = rng.uniform_in(1e-3, 1.0);
            (y, tau, lambda)
        })
        .collect()
}

/// Both closed-form proxes against the brute-force minimizer.
pub fn prox_oracle_suite(prox_conj: ProxFn, prox_h: ProxFn, triples: &[(f64, f64, f64)]) -> SuiteResult {
    let mut errors = Vec::with_capacity(2 * triples.len());
    for &(y, tau, lambda) in triples {
        let reg = WRegularizer::new(lambda).expect("triples have positive lambda");
        let conj = prox_oracle(|v| reg.conj_value(&[v]).to_f64(), y, tau, DEFAULT_RESOLUTION);
        let h = prox_oracle(|v| reg.value(&[v]), y, tau, DEFAULT_RESOLUTION);
        errors.push((prox_conj(y, tau, lambda) - conj).abs());
        errors.push((prox_h(y, tau, lambda) - h).abs());
    }
    SuiteResult::from_errors(
        "prox_oracle",
        &errors,
        1e-6,
        format!("{} (y, tau, lambda) triples, tolerance 1e-6", triples.len()),
    )
}

/// The four worked values at `λ = 0.05`, `τ = 0.01`, compared exactly. The
/// interior value is `y − τ` as evaluated in floating point.
pub fn prox_table_suite(prox_conj: ProxFn) -> SuiteResult {
    let table = [(0.07, 0.05), (0.03, 0.03 - 0.01), (0.005, 0.0), (-0.07, -0.05)];
    let errors: Vec<f64> = table
        .iter()
        .map(|&(y, want)| {
            let got = prox_conj(y, 0.01, 0.05);
            if got == want {
                0.0
            } else {
                (got - want).abs().max(f64::MIN_POSITIVE)
            }
        })
        .collect();
    SuiteResult::from_errors("prox_table", &errors, 0.0, "exact equality")
}

/// A small random hashing problem with random codes.
pub fn random_hashing_instance(seed: u64, per_class: usize) -> (HashingProblem, Vec<f64>, Matrix) {
    let mut rng = Rng::seed_from(seed);
    let ds = gen_gaussian_clusters(
        &mut rng,
        &ClusterSpec {
            classes: 3,
            per_class,
            dim: 5,
            query_fraction: 0.0,
            ..ClusterSpec::default()
        },
    )
    .expect("fixed cluster spec is valid");
    let (features, labels) = ds.part(Split::Train);
    let pairs = build_pairs(&labels, PairMode::All, &mut rng).expect("at least two samples");
    let spec = MlpSpec::new(vec![5, 6, 4]).expect("fixed widths");
    let x = spec.init_params(&mut rng).into_inner();
    let alpha = rng.uniform_in(0.3, 1.0);
    let gamma = rng.uniform_in(0.5, 5.0);
    let p = HashingProblem::new(features, labels, spec, alpha, pairs, gamma, 0.05).expect("valid instance");
    let b = Matrix::from_vec(p.n(), 4, (0..p.n() * 4).map(|_| rng.uniform_in(-1.2, 1.2)).collect())
        .expect("shape matches");
    (p, x, b)
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, floor)`.
fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    diff / norm_sq(a).sqrt().max(norm_sq(b).sqrt()).max(floor)
}

fn central_difference<F: Fn(&[f64]) -> f64>(f: F, at: &[f64], h: f64) -> Vec<f64> {
    let mut v = at.to_vec();
    (0..at.len())
        .map(|k| {
            let orig = v[k];
            v[k] = orig + h;
            let up = f(&v);
            v[k] = orig - h;
            let down = f(&v);
            v[k] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `∇ₓF`, `∇_B F` and the loss gradient `∇_U f` against central differences
/// on `instances` random problems each.
pub fn gradient_suite(instances: usize, seed: u64) -> SuiteResult {
    let mut errors = Vec::new();
    let h = 1e-6;
    for i in 0..instances {
        let (p, x, b) = random_hashing_instance(seed.wrapping_add(i as u64), 3);
        let gx = match p.grad_x(&x, &b) {
            Ok(g) => g,
            Err(e) => return SuiteResult::failed("gradients", e.to_string()),
        };
        let fx = central_difference(|xv| p.value(xv, &b).unwrap_or(f64::NAN), &x, h);
        errors.push(rel_err(&gx, &fx, 1e-8));

        let gb = grad_b(&p, &x, &b).expect("shapes match");
        let fb = central_difference(
            |bv| {
                let m = Matrix::from_vec(b.rows(), b.cols(), bv.to_vec()).expect("shape");
                penalty_value(&p, &x, &m).unwrap_or(f64::NAN)
            },
            b.as_slice(),
            h,
        );
        errors.push(rel_err(gb.as_slice(), &fb, 1e-8));

        let u = p.outputs(&x).expect("forward pass");
        let spec = PairwiseLossSpec::new(p.alpha_loss(), p.pairs().clone()).expect("valid loss");
        let (_, gu) = pairwise_loss(&spec, &u).expect("shapes match");
        let fu = central_difference(
            |uv| {
                let m = Matrix::from_vec(u.rows(), u.cols(), uv.to_vec()).expect("shape");
                pairwise_loss(&spec, &m).map(|r| r.0).unwrap_or(f64::NAN)
            },
            u.as_slice(),
            h,
        );
        errors.push(rel_err(gu.as_slice(), &fu, 1e-8));
    }
    SuiteResult::from_errors(
        "gradients",
        &errors,
        1e-5,
        format!("{instances} instances x (grad_x, grad_B, loss), relative tolerance 1e-5"),
    )
}

/// The average of all single-sample gradients equals the full gradient.
pub fn unbiasedness_suite(instances: usize, seed: u64) -> SuiteResult {
    let mut errors = Vec::new();
    for i in 0..instances {
        let (p, x, b) = random_hashing_instance(seed.wrapping_add(i as u64), 2 + i % 9);
        let full = p.grad_x(&x, &b).expect("valid instance");
        let mut avg = vec![0.0; full.len()];
        for j in 0..p.n() {
            let g = p.grad_x_batch(&x, &b, &[j]).expect("valid index");
            for (a, v) in avg.iter_mut().zip(g.iter()) {
                *a += v;
            }
        }
        avg.iter_mut().for_each(|a| *a /= p.n() as f64);
        errors.push(rel_err(&avg, &full, 1.0));
    }
    SuiteResult::from_errors("unbiasedness", &errors, 1e-12, "n <= 32, tolerance 1e-12")
}

/// Stationarity of analytically constructed critical triples.
pub fn kkt_suite(instances: usize, seed: u64) -> SuiteResult {
    let mut rng = Rng::seed_from(seed);
    let mut errors = Vec::new();
    for _ in 0..instances {
        let lambda = rng.uniform_in(0.01, 0.5);
        let v = rng.uniform_in(0.05, 0.95) * lambda;
        let gamma = rng.uniform_in(0.5, 5.0);
        let (toy, x, b, lam) =
            QuadraticToy::with_critical_point(&mut rng, 8, 4, gamma, lambda, v).expect("valid construction");
        errors.push(stationarity(&toy, &x, &b, &lam).map(|s| s.total).unwrap_or(f64::INFINITY));
    }
    SuiteResult::from_errors("kkt", &errors, 1e-10, "stationarity total < 1e-10")
}

/// Dual steps stay in `[-λ, λ]` and satisfy the optimality inclusion.
pub fn dual_step_suite(lambda: f64, steps: usize, seed: u64) -> SuiteResult {
    let reg = match WRegularizer::new(lambda) {
        Ok(r) => r,
        Err(e) => return SuiteResult::failed("dual_step", e.to_string()),
    };
    let mut rng = Rng::seed_from(seed);
    let mut errors = Vec::new();
    for _ in 0..steps {
        let mk = |rng: &mut Rng, s: f64| {
            Matrix::from_vec(3, 3, (0..9).map(|_| rng.uniform_in(-s, s)).collect()).expect("shape")
        };
        let lam = mk(&mut rng, lambda);
        let b = mk(&mut rng, 2.0);
        let bn = mk(&mut rng, 2.0);
        let tau = rng.uniform_in(1e-3, 1.0);
        let next = step_lambda(&reg, &lam, &b, &bn, tau).expect("shapes match");
        let range = (next.max_abs() - lambda).max(0.0);
        let viol = optimality_violation(&reg, &lam, &next, &b, &bn, tau).unwrap_or(f64::INFINITY);
        errors.push(range.max(viol));
    }
    SuiteResult::from_errors("dual_step", &errors, 1e-10, "range and optimality inclusion, tolerance 1e-10")
}

/// Analysis constants used by the positivity suite: momentum inside the
/// admissible region and the theory step.
pub const ANALYSIS_ALPHA: f64 = 0.3;
pub const ANALYSIS_BETA: f64 = 0.5;

/// `C_B > 0`, `C_x > 0` and the remaining positivity conditions over a range
/// of `L_F` with `τ L_F` at 75% of its admissible limit.
pub fn positivity_suite(lambda: f64, delta: f64, nu: f64) -> SuiteResult {
    if WRegularizer::new(lambda).is_err() {
        return SuiteResult::failed("lyapunov_positivity", format!("lambda = {lambda} is not positive"));
    }
    let mut errors = Vec::new();
    for l_f in [0.1, 1.0, 10.0, 100.0] {
        let tau = 0.75 * tau_l_limit() / l_f;
        let cfg = LyapunovConfig::theory_step(l_f, tau, delta, nu, ANALYSIS_ALPHA, ANALYSIS_BETA)
            .and_then(|eta| LyapunovConfig::new(l_f, tau, delta, nu, ANALYSIS_ALPHA, ANALYSIS_BETA, eta));
        match cfg {
            Ok(c) => {
                let rep = c.positivity();
                errors.push(if rep.all_hold() { 0.0 } else { 1.0 });
            }
            Err(_) => errors.push(1.0),
        }
    }
    SuiteResult::from_errors(
        "lyapunov_positivity",
        &errors,
        0.0,
        format!("L_F in {{0.1, 1, 10, 100}}, alpha = {ANALYSIS_ALPHA}, beta = {ANALYSIS_BETA}, delta = {delta}, nu = {nu}"),
    )
}

/// mAP by sorting every query's database by `(distance, index)` and
/// averaging precision at the relevant ranks.
pub fn brute_force_map(query: &Matrix, query_labels: &[u64], db: &Matrix, db_labels: &[u64]) -> Option<f64> {
    let code = |m: &Matrix, i: usize| -> Vec<bool> { m.row(i).iter().map(|&v| v < 0.0).collect() };
    let mut aps = Vec::new();
    for (q, &label) in query_labels.iter().enumerate().take(query.rows()) {
        let qc = code(query, q);
        let mut order: Vec<(usize, usize)> = (0..db.rows())
            .map(|j| {
                let d = code(db, j).iter().zip(&qc).filter(|(a, b)| a != b).count();
                (d, j)
            })
            .collect();
        order.sort();
        let rel: Vec<bool> = order.iter().map(|&(_, j)| similar(label, db_labels[j])).collect();
        let r_q = rel.iter().filter(|&&r| r).count();
        if r_q == 0 {
            continue;
        }
        let (mut hits, mut acc) = (0usize, 0.0);
        for (k, &r) in rel.iter().enumerate() {
            if r {
                hits += 1;
                acc += hits as f64 / (k + 1) as f64;
            }
        }
        aps.push(acc / r_q as f64);
    }
    if aps.is_empty() {
        None
    } else {
        Some(aps.iter().sum::<f64>() / aps.len() as f64)
    }
}

/// Random `±1` codes with labels from `classes` classes.
pub fn random_codes(rng: &mut Rng, n: usize, bits: usize, classes: usize) -> (Matrix, Vec<u64>) {
    let data = (0..n * bits).map(|_| if rng.uniform() < 0.5 { -1.0 } else { 1.0 }).collect();
    let labels = (0..n).map(|_| 1u64 << rng.index(classes)).collect();
    (Matrix::from_vec(n, bits, data).expect("shape"), labels)
}

pub fn metrics_suite(instances: usize, seed: u64) -> SuiteResult {
    let mut rng = Rng::seed_from(seed);
    let mut errors = Vec::new();
    let mut hist_err = 0.0f64;
    let worked = average_precision(&[true, false, true], 2, 3).unwrap_or(f64::NAN);
    let direct = (1.0 + 2.0 / 3.0) / 2.0;
    errors.push(if worked == direct { 0.0 } else { (worked - direct).abs().max(f64::MIN_POSITIVE) });
    for _ in 0..instances {
        let bits = 2 + rng.index(7);
        let (nq, nd) = (1 + rng.index(10), 2 + rng.index(48));
        let (qm, ql) = random_codes(&mut rng, nq, bits, 3);
        let (dm, dl) = random_codes(&mut rng, nd, bits, 3);
        let (qc, dc) = (CodeMatrix::from_continuous(&qm), CodeMatrix::from_continuous(&dm));
        let fast = Labeled::new(&qc, &ql)
            .and_then(|q| Labeled::new(&dc, &dl).and_then(|d| mean_ap(&q, &d, None)))
            .map(|r| r.map)
            .ok();
        let slow = brute_force_map(&qm, &ql, &dm, &dl);
        errors.push(match (fast, slow) {
            (Some(a), Some(b)) if a == b => 0.0,
            (None, None) => 0.0,
            (Some(a), Some(b)) => (a - b).abs().max(f64::MIN_POSITIVE),
            _ => f64::INFINITY,
        });
        if let Ok(h) = hamming_histograms(&dc, &dl) {
            for hist in [&h.intra, &h.inter] {
                hist_err = hist_err.max((hist.iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    let mut r = SuiteResult::from_errors("metrics", &errors, 0.0, "worked AP 5/6 and mAP equal to brute force exactly, histogram mass 1 +- 1e-12");
    if hist_err > 1e-12 {
        r.passed = false;
        r.failures += 1;
        r.worst = r.worst.max(hist_err);
    }
    r.checks += 1;
    r
}

/// Inputs of [`run_all`] taken from an experiment configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyParams {
    pub lambda: f64,
    pub delta: f64,
    pub nu: f64,
    pub seed: u64,
}

pub fn run_all(p: &VerifyParams) -> Vec<SuiteResult> {
    let triples = random_triples(p.seed, 1000);
    vec![
        prox_oracle_suite(&prox_conj_impl, &prox_h_impl, &triples),
        prox_table_suite(&prox_conj_impl),
        gradient_suite(20, p.seed),
        unbiasedness_suite(10, p.seed),
        kkt_suite(10, p.seed),
        dual_step_suite(p.lambda, 500, p.seed),
        positivity_suite(p.lambda, p.delta, p.nu),
        metrics_suite(50, p.seed),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_maps_pass() {
        let t = random_triples(3, 100);
        assert!(prox_oracle_suite(&prox_conj_impl, &prox_h_impl, &t).passed);
        assert!(prox_table_suite(&prox_conj_impl).passed);
        assert!(kkt_suite(3, 1).passed);
        assert!(dual_step_suite(0.05, 50, 1).passed);
        assert!(positivity_suite(0.05, 1.0 / 6.0, 0.05).passed);
        assert!(metrics_suite(10, 1).passed);
    }

    #[test]
    fn tampered_branch_constant_is_caught() {
        let tampered = |y: f64, tau: f64, lambda: f64| {
            if y > lambda + tau {
                lambda
            } else if y > tau {
                y - 0.9 * tau
            } else {
                prox_conj_impl(y, tau, lambda)
            }
        };
        let t = random_triples(4, 200);
        assert!(!prox_oracle_suite(&tampered, &prox_h_impl, &t).passed);
        assert!(!prox_table_suite(&tampered).passed);
    }

    #[test]
    fn nonpositive_lambda_fails_positivity() {
        assert!(!positivity_suite(0.0, 1.0 / 6.0, 0.05).passed);
        assert!(!positivity_suite(-1.0, 1.0 / 6.0, 0.05).passed);
        assert!(!dual_step_suite(0.0, 5, 1).passed);
    }
}
