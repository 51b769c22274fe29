use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use treeguard_bench::can_fixture;
use treeguard_core::select::{importance_report, importance_specs};
use treeguard_core::{resample, ModelKind, ModelSpec, ResampleMethod, ResamplePlan};

fn learners(c: &mut Criterion) {
    let fx = can_fixture(20_000, 1);
    let mut group = c.benchmark_group("fit_20k_can");
    group.sample_size(10);
    for kind in ModelKind::SINGULAR {
        let spec = ModelSpec::default_for(kind).with_trees(50).with_seed(1);
        group.bench_with_input(BenchmarkId::from_parameter(spec.describe()), &spec, |b, spec| {
            b.iter(|| spec.fit(black_box(&fx.data)).unwrap())
        });
    }
    group.finish();
}

fn oversampling(c: &mut Criterion) {
    let fx = can_fixture(10_000, 2);
    let mut group = c.benchmark_group("oversample_10k_can");
    group.sample_size(10);
    for method in [ResampleMethod::Random, ResampleMethod::Smote] {
        let plan = ResamplePlan::equalize(&fx.data, method, 1.0, 3);
        group.bench_function(format!("{method:?}"), |b| {
            b.iter(|| resample(black_box(&fx.data), &plan).unwrap())
        });
    }
    group.finish();
}

fn importance(c: &mut Criterion) {
    let fx = can_fixture(10_000, 4);
    let specs = importance_specs(20, 8, 5);
    let mut group = c.benchmark_group("feature_selection");
    group.sample_size(10);
    group.bench_function("averaged_importance_10k", |b| {
        b.iter(|| importance_report(black_box(&fx.data), &specs).unwrap())
    });
    group.finish();
}

criterion_group!(benches, learners, oversampling, importance);
criterion_main!(benches);
