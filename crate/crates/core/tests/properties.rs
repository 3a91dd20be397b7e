use proptest::prelude::*;

use dualhash_core::metrics::{hamming_dist, hamming_histograms, mean_ap, CodeMatrix, Labeled};
use dualhash_core::model::{read_params, write_params, MlpSpec};
use dualhash_core::numerics::{Matrix, Rng};
use dualhash_core::optimizer::{optimality_violation, step_lambda};
use dualhash_core::regularizer::WRegularizer;

fn pm1(bits: Vec<bool>) -> Vec<f64> {
    bits.into_iter().map(|b| if b { 1.0 } else { -1.0 }).collect()
}

fn codes(rows: usize, bits: usize) -> impl Strategy<Value = Matrix> {
    proptest::collection::vec(any::<bool>(), rows * bits)
        .prop_map(move |v| Matrix::from_vec(rows, bits, pm1(v)).unwrap())
}

fn brute_ap(q: &[f64], ql: u64, db: &Matrix, dl: &[u64]) -> Option<f64> {
    let mut order: Vec<(usize, usize)> = (0..db.rows())
        .map(|j| (q.iter().zip(db.row(j)).filter(|(a, b)| a != b).count(), j))
        .collect();
    order.sort();
    let relevant = order.iter().filter(|&&(_, j)| ql & dl[j] != 0).count();
    if relevant == 0 {
        return None;
    }
    let (mut hits, mut acc) = (0usize, 0.0);
    for (k, &(_, j)) in order.iter().enumerate() {
        if ql & dl[j] != 0 {
            hits += 1;
            acc += hits as f64 / (k + 1) as f64;
        }
    }
    Some(acc / relevant as f64)
}

/// Straight-line evaluation of the ELU hidden / tanh output network.
fn naive_forward(widths: &[usize], x: &[f64], a: &[f64]) -> Vec<f64> {
    let mut act = a.to_vec();
    let mut off = 0;
    for (l, w) in widths.windows(2).enumerate() {
        let (fi, fo) = (w[0], w[1]);
        let weights = &x[off..off + fi * fo];
        let bias = &x[off + fi * fo..off + fi * fo + fo];
        off += fi * fo + fo;
        let mut next = vec![0.0; fo];
        for o in 0..fo {
            let mut z = bias[o];
            for i in 0..fi {
                z += weights[o * fi + i] * act[i];
            }
            next[o] = if l == widths.len() - 2 {
                z.tanh()
            } else if z > 0.0 {
                z
            } else {
                z.exp() - 1.0
            };
        }
        act = next;
    }
    act
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn conj_prox_stays_in_box_and_is_nonexpansive(
        a in -3.0f64..3.0, b in -3.0f64..3.0, tau in 1e-4f64..2.0, lambda in 1e-3f64..2.0,
    ) {
        let r = WRegularizer::new(lambda).unwrap();
        let (pa, pb) = (r.prox_conj_scalar(a, tau), r.prox_conj_scalar(b, tau));
        prop_assert!(pa.abs() <= lambda && pb.abs() <= lambda);
        prop_assert!((pa - pb).abs() <= (a - b).abs() + 1e-15);
    }

    #[test]
    fn prox_maps_are_odd(y in -3.0f64..3.0, tau in 1e-4f64..2.0, lambda in 1e-3f64..2.0) {
        let r = WRegularizer::new(lambda).unwrap();
        prop_assert_eq!(r.prox_conj_scalar(-y, tau), -r.prox_conj_scalar(y, tau));
        prop_assert_eq!(r.prox_h_scalar(-y, tau), -r.prox_h_scalar(y, tau));
    }

    #[test]
    fn conj_prox_minimizes_its_objective(
        y in -3.0f64..3.0, tau in 1e-3f64..2.0, lambda in 1e-3f64..2.0, t in -1.0f64..1.0,
    ) {
        let r = WRegularizer::new(lambda).unwrap();
        let obj = |p: f64| tau * p.abs() + 0.5 * (p - y).powi(2);
        let p = r.prox_conj_scalar(y, tau);
        prop_assert!(obj(p) <= obj(t * lambda) + 1e-12);
    }

    #[test]
    fn h_prox_minimizes_its_objective(
        y in -3.0f64..3.0, tau in 1e-3f64..2.0, lambda in 1e-3f64..2.0, q in -4.0f64..4.0,
    ) {
        let r = WRegularizer::new(lambda).unwrap();
        let obj = |z: f64| tau * r.value(&[z]) + 0.5 * (z - y).powi(2);
        prop_assert!(obj(r.prox_h_scalar(y, tau)) <= obj(q) + 1e-12);
    }

    #[test]
    fn fenchel_young(z in -4.0f64..4.0, t in -1.0f64..1.0, lambda in 1e-3f64..2.0) {
        let r = WRegularizer::new(lambda).unwrap();
        let x = t * lambda;
        let conj = r.conj_value(&[x]).to_f64();
        prop_assert!(r.value(&[z]) + conj >= x * z - 1e-12);
        prop_assert!(r.value(&[x.signum()]) + conj <= x * x.signum() + 1e-12);
    }

    #[test]
    fn dual_step_keeps_feasibility_and_identity(
        lam in proptest::collection::vec(-1.0f64..1.0, 12),
        b in proptest::collection::vec(-2.0f64..2.0, 12),
        bn in proptest::collection::vec(-2.0f64..2.0, 12),
        tau in 1e-3f64..1.0,
        lambda in 1e-2f64..1.0,
    ) {
        let r = WRegularizer::new(lambda).unwrap();
        let lam = Matrix::from_vec(3, 4, lam.iter().map(|v| v * lambda).collect()).unwrap();
        let b = Matrix::from_vec(3, 4, b).unwrap();
        let bn = Matrix::from_vec(3, 4, bn).unwrap();
        let next = step_lambda(&r, &lam, &b, &bn, tau).unwrap();
        prop_assert!(next.max_abs() <= lambda);
        prop_assert!(optimality_violation(&r, &lam, &next, &b, &bn, tau).unwrap() <= 1e-10);
    }

    #[test]
    fn hamming_is_a_metric(a in codes(3, 16)) {
        let c = CodeMatrix::from_continuous(&a);
        for i in 0..3 {
            prop_assert_eq!(c.distance(i, &c, i), 0);
            for j in 0..3 {
                let d = c.distance(i, &c, j);
                prop_assert_eq!(d, hamming_dist(a.row(i), a.row(j)).unwrap());
                prop_assert_eq!(d, c.distance(j, &c, i));
                for k in 0..3 {
                    prop_assert!(d <= c.distance(i, &c, k) + c.distance(k, &c, j));
                }
            }
        }
    }

    #[test]
    fn histograms_are_normalized(m in codes(12, 6), labels in proptest::collection::vec(0u32..3, 12)) {
        let labels: Vec<u64> = labels.into_iter().map(|l| 1 << l).collect();
        let c = CodeMatrix::from_continuous(&m);
        if let Ok(h) = hamming_histograms(&c, &labels) {
            prop_assert!((h.intra.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!((h.inter.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(h.intra.iter().chain(&h.inter).all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn mean_ap_matches_brute_force(
        q in codes(4, 8), d in codes(20, 8),
        ql in proptest::collection::vec(0u32..4, 4), dl in proptest::collection::vec(0u32..4, 20),
    ) {
        let ql: Vec<u64> = ql.into_iter().map(|l| 1 << l).collect();
        let dl: Vec<u64> = dl.into_iter().map(|l| 1 << l).collect();
        let aps: Vec<f64> = (0..4).filter_map(|i| brute_ap(q.row(i), ql[i], &d, &dl)).collect();
        let (qc, dc) = (CodeMatrix::from_continuous(&q), CodeMatrix::from_continuous(&d));
        let fast = mean_ap(&Labeled::new(&qc, &ql).unwrap(), &Labeled::new(&dc, &dl).unwrap(), None);
        match fast {
            Ok(m) => {
                prop_assert!(!aps.is_empty());
                prop_assert_eq!(m.map, aps.iter().sum::<f64>() / aps.len() as f64);
            }
            Err(_) => prop_assert!(aps.is_empty()),
        }
    }

    #[test]
    fn params_round_trip_exactly(seed in any::<u64>(), hidden in 1usize..6) {
        let spec = MlpSpec::new(vec![3, hidden, 2]).unwrap();
        let x = spec.init_params(&mut Rng::seed_from(seed));
        let mut buf = Vec::new();
        write_params(&spec, x.as_slice(), &mut buf).unwrap();
        let (spec2, x2) = read_params(buf.as_slice()).unwrap();
        prop_assert_eq!(spec2, spec);
        prop_assert_eq!(x2, x);
    }

    #[test]
    fn forward_matches_naive_network(seed in any::<u64>(), a in proptest::collection::vec(-2.0f64..2.0, 4)) {
        let widths = vec![4, 6, 5, 3];
        let spec = MlpSpec::new(widths.clone()).unwrap();
        let x = spec.init_params(&mut Rng::seed_from(seed));
        let got = spec.forward(x.as_slice(), &a).unwrap();
        let want = naive_forward(&widths, x.as_slice(), &a);
        for (g, w) in got.iter().zip(&want) {
            prop_assert!((g - w).abs() <= 1e-12);
        }
    }
}

#[test]
fn network_gradient_matches_finite_differences() {
    let mut rng = Rng::seed_from(77);
    for _ in 0..20 {
        let widths = vec![3 + rng.index(3), 2 + rng.index(5), 1 + rng.index(4)];
        let spec = MlpSpec::new(widths.clone()).unwrap();
        let mut x = spec.init_params(&mut rng).into_inner();
        for v in x.iter_mut() {
            *v += 0.1 * rng.normal();
        }
        let a: Vec<f64> = (0..widths[0]).map(|_| rng.normal()).collect();
        let c: Vec<f64> = (0..widths[2]).map(|_| rng.normal()).collect();
        let g = spec.backward(&x, &[&a], &[&c]).unwrap();
        let f = |x: &[f64]| naive_forward(&widths, x, &a).iter().zip(&c).map(|(u, c)| u * c).sum::<f64>();
        let h = 1e-6;
        let fd: Vec<f64> = (0..x.len())
            .map(|k| {
                let mut p = x.clone();
                let mut m = x.clone();
                p[k] += h;
                m[k] -= h;
                (f(&p) - f(&m)) / (2.0 * h)
            })
            .collect();
        let err = g.as_slice().iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = fd.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        assert!(err / scale <= 1e-5, "relative error {} for widths {widths:?}", err / scale);
    }
}
