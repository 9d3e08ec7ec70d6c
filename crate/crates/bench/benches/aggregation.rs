use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use zeno_bench::fixture;
use zeno_core::{aggregate, AggregatorConfig, Rule, ScoreOracle, DEFAULT_RHO};

const DIM: usize = 10_000;

fn by_workers(c: &mut Criterion) {
    for rule in Rule::ALL {
        let mut group = c.benchmark_group(format!("aggregate/{rule}"));
        for m in [10usize, 20, 40, 80] {
            let fx = fixture(m, DIM, 7);
            let oracle = ScoreOracle::new(&fx.task, &fx.batch, 0.1, DEFAULT_RHO);
            let config = AggregatorConfig::new(rule, m / 5);
            group.throughput(Throughput::Elements(m as u64));
            group.bench_with_input(BenchmarkId::from_parameter(m), &m, |b, _| {
                b.iter(|| aggregate(&config, &fx.candidates, &fx.x, Some(&oracle)).unwrap())
            });
        }
        group.finish();
    }
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = by_workers
}
criterion_main!(benches);
