//! Data-parallel kernels on a one-thread pool against the default pool.
//! Build with `--no-default-features` to time the sequential fallback instead.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gradshift::ensemble::PropagationGraph;
use gradshift::model::Classifier;
use gradshift::selection::{score_source_features, Kernel, Prototypes};

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

#[cfg(feature = "parallel")]
fn pools() -> Vec<(&'static str, rayon::ThreadPool)> {
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let all = rayon::ThreadPoolBuilder::new().build().unwrap();
    vec![("one_thread", one), ("default_pool", all)]
}

#[cfg(feature = "parallel")]
fn on_each_pool(c: &mut Criterion, name: &str, work: impl Fn() + Sync) {
    let mut group = c.benchmark_group(name);
    for (label, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(label), |b| b.iter(|| pool.install(&work)));
    }
    group.finish();
}

#[cfg(not(feature = "parallel"))]
fn on_each_pool(c: &mut Criterion, name: &str, work: impl Fn() + Sync) {
    c.benchmark_group(name)
        .bench_function(BenchmarkId::from_parameter("sequential"), |b| b.iter(&work));
}

fn affinity(c: &mut Criterion) {
    let labeled = random_matrix(600, 32, 1);
    let unlabeled = random_matrix(600, 32, 2);
    let labels: Vec<usize> = (0..600).map(|i| i % 2).collect();
    on_each_pool(c, "affinity_1200", || {
        PropagationGraph::from_features(labeled.view(), &labels, unlabeled.view(), 2, 1.0).unwrap();
    });
}

fn inference(c: &mut Criterion) {
    let model = Classifier::new(&[2, 64, 64, 2], 3).unwrap();
    let x = random_matrix(8192, 2, 4);
    on_each_pool(c, "predict_proba_8192", || {
        model.predict_proba(x.view()).unwrap();
    });
}

fn source_scoring(c: &mut Criterion) {
    let target = random_matrix(2000, 32, 5);
    let pseudo: Vec<usize> = (0..2000).map(|i| i % 4).collect();
    let protos = Prototypes::from_features(target.view(), &pseudo, 4).unwrap();
    let source = random_matrix(4000, 32, 6);
    let labels: Vec<usize> = (0..4000).map(|i| i % 4).collect();
    on_each_pool(c, "score_sources_4000", || {
        score_source_features(source.view(), &labels, &protos, Kernel::SoftmaxNegSq).unwrap();
    });
}

criterion_group!(benches, affinity, inference, source_scoring);
criterion_main!(benches);
