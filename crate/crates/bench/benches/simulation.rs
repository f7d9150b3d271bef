use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use hawkes_bvm::simulate::{simulate_cluster, simulate_thinning};
use hawkes_bvm_bench::two_mark_model;

fn bench_simulation(c: &mut Criterion) {
    let model = two_mark_model(16);
    let mut group = c.benchmark_group("simulate T=1000");
    group.bench_function("thinning", |b| {
        b.iter(|| black_box(simulate_thinning(&model, 1000.0, 50.0, 3).unwrap()))
    });
    group.bench_function("cluster", |b| b.iter(|| black_box(simulate_cluster(&model, 1000.0, 3).unwrap())));
    group.finish();
}

criterion_group!(benches, bench_simulation);
criterion_main!(benches);
