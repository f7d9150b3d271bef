use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use hawkes_bvm::likelihood::Direction;
use hawkes_bvm::palm::{estimate_palm, info_operator_apply, info_operator_invert, InvertOptions, PalmBudget};
use hawkes_bvm::GridFunction;
use hawkes_bvm_bench::box_model;

fn bench_palm(c: &mut Criterion) {
    let model = box_model(16);
    let budget = PalmBudget::new(5000.0, 8, 2);
    let mut group = c.benchmark_group("palm");
    group.sample_size(10);
    group.bench_function("estimate 16 cells", |b| {
        b.iter(|| black_box(estimate_palm(&model, &budget, 16).unwrap()))
    });
    let palm = estimate_palm(&model, &budget, 16).unwrap();
    let target = Direction::new(vec![0.0], vec![GridFunction::constant(1.0, 16, 1.0)]).unwrap();
    group.bench_function("apply", |b| b.iter(|| black_box(info_operator_apply(&target, &palm).unwrap())));
    group.bench_function("invert", |b| {
        b.iter(|| black_box(info_operator_invert(&target, &palm, InvertOptions::default()).unwrap()))
    });
    group.finish();
}

criterion_group!(benches, bench_palm);
criterion_main!(benches);
