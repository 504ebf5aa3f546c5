use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use outreach::colgen::feasible;
use outreach::fixtures;
use outreach::pricing::{price_exact, DualPoint};
use outreach::{buckets, greedy_equal, solve_kappa, TargetFunction};

fn greedy(c: &mut Criterion) {
    let inst = fixtures::example1();
    c.bench_function("greedy_equal/example1", |b| {
        b.iter(|| greedy_equal(black_box(&inst), 4).unwrap())
    });
}

fn targets(c: &mut Criterion) {
    let inst = fixtures::fig5();
    let f = TargetFunction::Sqrt;
    c.bench_function("solve_kappa/fig5", |b| {
        b.iter(|| solve_kappa(black_box(&inst), &f, 4).unwrap())
    });
}

fn bucket_layout(c: &mut Criterion) {
    let inst = fixtures::example1();
    let tp = solve_kappa(&inst, &TargetFunction::Sqrt, 4).unwrap();
    c.bench_function("buckets/example1", |b| {
        b.iter(|| buckets(black_box(&inst), 4, &tp).unwrap())
    });
}

fn pricing(c: &mut Criterion) {
    let inst = fixtures::fig5();
    let duals = DualPoint {
        y: 0.0,
        per_city: inst.shares().to_vec(),
    };
    c.bench_function("price_exact/fig5", |b| {
        b.iter(|| price_exact(black_box(&inst), 3, &duals).unwrap())
    });
}

fn column_generation(c: &mut Criterion) {
    let inst = fixtures::fig5();
    c.bench_function("feasible/fig5_t3", |b| {
        b.iter(|| feasible(black_box(&inst), 3).unwrap())
    });
}

criterion_group!(
    benches,
    greedy,
    targets,
    bucket_layout,
    pricing,
    column_generation
);
criterion_main!(benches);
