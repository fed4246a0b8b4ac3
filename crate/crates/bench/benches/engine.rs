use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use syncfv::benchmarks;
use syncfv::engine::Batch;
use syncfv_bench::single_run;

fn synchronized_vs_classical(c: &mut Criterion) {
    let b = benchmarks::pure_death();
    let mut group = c.benchmark_group("pure_death_run");
    group.sample_size(20);
    for n in [1_000, 10_000] {
        group.bench_with_input(BenchmarkId::new("theta_0.5", n), &n, |bench, &n| {
            let mut seed = 0;
            bench.iter(|| {
                seed += 1;
                single_run(&b, n, None, seed)
            })
        });
        group.bench_with_input(BenchmarkId::new("k_1", n), &n, |bench, &n| {
            let mut seed = 0;
            bench.iter(|| {
                seed += 1;
                single_run(&b, n, Some(Batch::Size(1)), seed)
            })
        });
    }
    group.finish();
}

fn benchmark_models(c: &mut Criterion) {
    let mut group = c.benchmark_group("ctmc_run_n1000");
    group.sample_size(20);
    for b in syncfv_bench::workloads() {
        group.bench_function(b.name, |bench| bench.iter(|| single_run(&b, 1_000, None, 7)));
    }
    group.finish();
}

criterion_group!(benches, synchronized_vs_classical, benchmark_models);
criterion_main!(benches);
