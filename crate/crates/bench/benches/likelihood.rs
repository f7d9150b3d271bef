use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use hawkes_bvm::likelihood::log_likelihood;
use hawkes_bvm::mcmc::LikelihoodCache;
use hawkes_bvm_bench::{box_model, path, two_mark_model};

fn bench_likelihood(c: &mut Criterion) {
    let mut group = c.benchmark_group("log_likelihood");
    for (name, model) in [("K=1", box_model(8)), ("K=2", two_mark_model(8))] {
        let stream = path(&model, 2000.0, 1);
        let cache = LikelihoodCache::new(&stream, model.support_end()).unwrap();
        group.bench_function(format!("exact {name}"), |b| {
            b.iter(|| black_box(log_likelihood(&model, &stream, 2000.0)))
        });
        group.bench_function(format!("cached {name}"), |b| b.iter(|| black_box(cache.log_likelihood(&model))));
    }
    group.finish();
}

criterion_group!(benches, bench_likelihood);
criterion_main!(benches);
