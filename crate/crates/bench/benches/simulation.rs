use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use freeride_bench::{ou_scenario, sgd_scenario};
use freeride_core::harness::monte_carlo;
use freeride_core::{
    recurrence_difference, run_coupled, run_training, weighted_average, ParameterVector, SampleWeights,
};

fn aggregation(c: &mut Criterion) {
    let mut g = c.benchmark_group("weighted_average");
    for &(clients, dim) in &[(10usize, 100usize), (100, 1000)] {
        let params: Vec<ParameterVector> = (0..clients)
            .map(|i| ParameterVector::splat(dim, i as f64).unwrap())
            .collect();
        let weights = SampleWeights::new((1..=clients as u64).collect()).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(format!("{clients}x{dim}")), &(), |b, _| {
            b.iter(|| weighted_average(black_box(&params), black_box(&weights)).unwrap())
        });
    }
    g.finish();
}

fn training(c: &mut Criterion) {
    let ou = ou_scenario(5, 2, 10, 200);
    c.bench_function("run_training/ou_5+2_d10_t200", |b| {
        b.iter(|| run_training(black_box(&ou)).unwrap())
    });
    let sgd = sgd_scenario(5, 100, 5, 20);
    c.bench_function("run_training/sgd_5+1_t20", |b| {
        b.iter(|| run_training(black_box(&sgd)).unwrap())
    });
}

fn coupled(c: &mut Criterion) {
    let s = ou_scenario(3, 2, 1, 50);
    c.bench_function("run_coupled/t50", |b| b.iter(|| run_coupled(black_box(&s)).unwrap()));
    let trace = run_coupled(&s).unwrap();
    c.bench_function("recurrence_difference/t50", |b| {
        b.iter(|| recurrence_difference(black_box(&trace), 50).unwrap())
    });
}

fn replication(c: &mut Criterion) {
    let s = ou_scenario(2, 1, 1, 0);
    let mut g = c.benchmark_group("monte_carlo");
    g.sample_size(10);
    g.bench_function("r200_t200", |b| {
        b.iter(|| monte_carlo(black_box(&s), 200, &[50, 100, 200]).unwrap())
    });
    g.finish();
}

criterion_group!(benches, aggregation, training, coupled, replication);
criterion_main!(benches);
