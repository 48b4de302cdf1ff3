//! Sequential versus rayon replica farming on the two lattice ensembles.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use kpzlab::experiment::ensemble::{run_coupled, run_heights, LatticePlan};
use kpzlab::replicas::Execution;
use kpzlab::rng::StreamFamily;

const REPLICAS: u64 = 64;

fn plan() -> LatticePlan {
    // eps = 0.2, macro times 0.5 and 1
    LatticePlan::new(0.2, 0.5, vec![12.5, 25.0], Some(40), None, 1.0, 0).unwrap()
}

fn executions() -> Vec<(&'static str, Execution)> {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    vec![
        ("sequential", Execution::Sequential),
        ("parallel", Execution::Parallel { workers: cores.max(2) }),
    ]
}

fn heights(c: &mut Criterion) {
    let plan = plan();
    let monitored = [-10, 0, 10];
    let mut group = c.benchmark_group("height_ensemble");
    for (name, exec) in executions() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| run_heights(&plan, &monitored, &[0], black_box(1), StreamFamily::Wasep, 0, REPLICAS, exec).unwrap())
        });
    }
    group.finish();
}

fn coupled(c: &mut Criterion) {
    let plan = plan();
    let mut group = c.benchmark_group("coupled_ensemble");
    for (name, exec) in executions() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| run_coupled(&plan, plan.window, black_box(1), StreamFamily::Coupled, 0, REPLICAS, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = heights, coupled
}
criterion_main!(benches);
