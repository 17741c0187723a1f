//! Dynamic vs fast routing at two scales. The large group matches the
//! main experiment shape (1152 lower capsules, 10 classes, 16-d poses).

use capsroute::{dynamic_route, fast_route};
use capsroute_bench::fixture;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

fn bench_scale(c: &mut Criterion, label: &str, n_lower: usize, train: usize, test: usize) {
    let fx = fixture(10, n_lower, 16, train, test);
    let examples = fx.test.examples();

    let mut group = c.benchmark_group(label);
    group.throughput(Throughput::Elements(examples.len() as u64));
    group.bench_function(BenchmarkId::new("dynamic", examples.len()), |b| {
        b.iter(|| {
            for e in examples {
                std::hint::black_box(dynamic_route(e, &fx.routing).unwrap());
            }
        })
    });
    group.bench_function(BenchmarkId::new("fast", examples.len()), |b| {
        b.iter(|| {
            for e in examples {
                std::hint::black_box(fast_route(e, &fx.master).unwrap());
            }
        })
    });
    group.finish();
}

fn routing_benches(c: &mut Criterion) {
    bench_scale(c, "routing/64x10x16", 64, 20, 10);
    bench_scale(c, "routing/1152x10x16", 1152, 20, 10);
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = routing_benches
}
criterion_main!(benches);
