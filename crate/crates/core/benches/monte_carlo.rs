use criterion::{criterion_group, criterion_main, Criterion};
use smti::harness::{run_convergence, Execution, SweepConfig};

fn sweep(execution: Execution) -> SweepConfig {
    SweepConfig {
        modes: 16,
        samples: 16,
        halvings: (4, 7),
        execution,
        ..SweepConfig::default()
    }
}

fn monte_carlo(c: &mut Criterion) {
    let mut g = c.benchmark_group("convergence_sweep");
    g.sample_size(10);
    g.bench_function("sequential", |b| b.iter(|| run_convergence(&sweep(Execution::Sequential)).unwrap()));
    g.bench_function("parallel", |b| {
        b.iter(|| run_convergence(&sweep(Execution::Parallel { threads: None })).unwrap())
    });
    g.finish();
}

criterion_group!(benches, monte_carlo);
criterion_main!(benches);
