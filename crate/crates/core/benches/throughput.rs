use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use dualhash_core::data::{build_pairs, gen_gaussian_clusters, ClusterSpec, PairMode, Split};
use dualhash_core::metrics::{mean_ap, CodeMatrix, Labeled};
use dualhash_core::model::MlpSpec;
use dualhash_core::numerics::{Rng, Vector};
use dualhash_core::par::set_parallel;
use dualhash_core::problem::{HashingProblem, TwoBlockProblem};

fn problem() -> (HashingProblem, Vector) {
    let root = Rng::seed_from(1);
    let ds = gen_gaussian_clusters(&mut root.split(10), &ClusterSpec::default()).unwrap();
    let (features, labels) = ds.part(Split::Train);
    let pairs = build_pairs(&labels, PairMode::Sampled { per_anchor: 20 }, &mut root.split(11)).unwrap();
    let spec = MlpSpec::new(vec![16, 32, 8]).unwrap();
    let x = spec.init_params(&mut root.split(12));
    let p = HashingProblem::new(features, labels, spec, 1.0, pairs, 3.0, 0.05).unwrap();
    (p, x)
}

fn paths(c: &mut Criterion) {
    let (p, x) = problem();
    let b = p.outputs(&x).unwrap();
    let batch: Vec<usize> = (0..32).map(|i| i * 7 % p.n()).collect();
    let codes = CodeMatrix::from_continuous(&b);

    let mut group = c.benchmark_group("throughput");
    for (name, on) in [("sequential", false), ("parallel", true)] {
        set_parallel(on);
        group.bench_function(BenchmarkId::new("full_gradient", name), |bench| {
            bench.iter(|| p.grad_x(&x, &b).unwrap())
        });
        group.bench_function(BenchmarkId::new("batch_gradient", name), |bench| {
            bench.iter(|| p.grad_x_batch(&x, &b, &batch).unwrap())
        });
        group.bench_function(BenchmarkId::new("mean_ap", name), |bench| {
            bench.iter(|| {
                let db = Labeled::new(&codes, p.labels()).unwrap();
                mean_ap(&db, &db, None).unwrap()
            })
        });
    }
    set_parallel(true);
    group.finish();
}

criterion_group!(benches, paths);
criterion_main!(benches);
