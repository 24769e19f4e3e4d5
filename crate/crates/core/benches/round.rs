use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lightyear_core::config::ExperimentConfig;
use lightyear_core::exec::Execution;
use lightyear_core::sim::{run_experiment, Federation};

fn config(n_clients: usize) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.n_clients = n_clients;
    c.rounds = 3;
    c
}

fn modes() -> [(&'static str, Execution); 2] {
    [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)]
}

fn one_round(c: &mut Criterion) {
    let mut group = c.benchmark_group("round");
    for n in [8, 16] {
        let cfg = config(n);
        for (name, exec) in modes() {
            group.bench_with_input(BenchmarkId::new(name, n), &cfg, |b, cfg| {
                b.iter_batched(
                    || Federation::new(cfg).unwrap(),
                    |mut fed| fed.run_round(1, exec).unwrap(),
                    criterion::BatchSize::LargeInput,
                )
            });
        }
    }
    group.finish();
}

fn experiment(c: &mut Criterion) {
    let mut group = c.benchmark_group("experiment");
    group.sample_size(10);
    let cfg = config(8);
    for (name, exec) in modes() {
        group.bench_function(name, |b| b.iter(|| run_experiment(&cfg, exec).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, one_round, experiment);
criterion_main!(benches);
